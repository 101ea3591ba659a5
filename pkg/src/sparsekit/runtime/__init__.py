"""Graph/weight file formats, validation, a deterministic interpreter and
the profiler that turns graphs into performance-model inputs."""
from sparsekit.runtime.graph import KINDS, GraphInput, Node, OpGraph, graph_from_dict, parse_graph, shape_infer
from sparsekit.runtime.interpreter import QTensor, apply_sparsity, calibrate, plan_fusion, random_inputs, run
from sparsekit.runtime.profile import profile
from sparsekit.runtime.store import WeightStore, load_weights, read_weights, save_weights, write_weights

__all__ = [
    "KINDS",
    "GraphInput",
    "Node",
    "OpGraph",
    "QTensor",
    "WeightStore",
    "apply_sparsity",
    "calibrate",
    "graph_from_dict",
    "load_weights",
    "parse_graph",
    "plan_fusion",
    "profile",
    "random_inputs",
    "read_weights",
    "run",
    "save_weights",
    "shape_infer",
    "write_weights",
]
