"""Regenerate the bundled graphs, weights, golden files and hardware config.

Usage: python tools/make_bundled.py [DATA_DIR]
"""
import json
import sys
from pathlib import Path

from sparsekit.perf import default_hw
from sparsekit.runtime import WeightStore, random_inputs, run, write_weights
from sparsekit.runtime.toys import BUILDERS, toy_graph, toy_store

WEIGHTS_FOR = ("resnet50_toy",)
GOLDEN_SEED = 0


def main(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for name in BUILDERS:
        (out / f"{name}.json").write_text(toy_graph(name).to_json() + "\n")
    for name in WEIGHTS_FOR:
        g, store = toy_graph(name), toy_store(name, seed=0)
        write_weights(out / f"{name}.spw", store)
        x = random_inputs(g, GOLDEN_SEED)
        write_weights(out / f"{name}_input.spw", WeightStore(x))
        write_weights(out / f"{name}_golden.spw", WeightStore(run(g, store, x)))
    hw = {"_comment": (
        "Dense peaks are the quoted sparse-equivalent peaks (944e12 int8, 472e12 bf16) divided by the 32x cap. "
        "vector_ops_per_s and per_op_overhead_s are invented free parameters; "
        "storage_overhead models CSR index metadata."
    )}
    hw.update(default_hw().to_dict())
    (out / "default_hw.json").write_text(json.dumps(hw, indent=2) + "\n")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/sparsekit/data")
