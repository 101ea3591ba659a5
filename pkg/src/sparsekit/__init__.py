"""sparsekit: sparse inference kernels, pruning with distillation, and an
analytical performance model of a high-sparsity inference accelerator."""

__version__ = "0.1.0"
