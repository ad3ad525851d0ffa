"""Sparse CNN inference with a fixed active-pixel budget, plus dense oracles."""
from .costmodel import active_fraction, conv_cost, default_calibration, estimate_cycles, model_cost, tree_depth
from .counters import OpCounter
from .model import ModelGraph, gen_random_model, load_model, run_dense, run_dense_constrained, run_sparse, save_model
from .numerics import DenseTensor, FixedFormat, quantize
from .sparse_core import (
    KernelWeights,
    ReduceConfig,
    SparseBundle,
    find_active,
    sparse_activation,
    sparse_avg_pool,
    sparse_conv,
    sparse_flatten,
    sparse_input_reduce,
)

__version__ = "0.1.0"
