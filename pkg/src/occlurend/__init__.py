"""Occlusion-aware split-sum inverse rendering of textured triangle meshes."""
import os

# skip the TBB layer probe (it warns on older TBB builds); OpenMP or the builtin workqueue suffice
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

__version__ = "0.1.0"
