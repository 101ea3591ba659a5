"""Analytical latency/throughput model of a high-sparsity inference accelerator.

Matmul/conv ops follow a roofline: effective MACs shrink with weight density
down to ``1 / max_sparsity_speedup``, compressed weight bytes shrink with
density (times an index-storage overhead), and the op takes the slower of
compute and memory plus a fixed dispatch overhead. Vector ops run on the
vector unit and gain nothing from sparsity, which is what bends speedup
curves below linear.
"""
from __future__ import annotations

import dataclasses
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from sparsekit.errors import ConfigurationError, ParseError

MATMUL, CONV, VECTOR = "matmul", "conv", "vector"
DEFAULT_FACTORS = (1, 2, 4, 8, 16, 32)

# sparse-equivalent peaks quoted for the chip; dense peaks are these over the 32x cap
SPARSE_EQUIV_INT8_OPS = 944e12
SPARSE_EQUIV_BF16_OPS = 472e12


@dataclass(frozen=True)
class HardwareConfig:
    dense_peak_int8_macs_per_s: float = SPARSE_EQUIV_INT8_OPS / 32
    dense_peak_f16_macs_per_s: float = SPARSE_EQUIV_BF16_OPS / 32
    precision: str = "int8"
    max_sparsity_speedup: float = 32.0
    mem_bandwidth_bytes_per_s: float = 72e9
    vector_ops_per_s: float = 1e12
    num_subsystems: int = 4
    per_op_overhead_s: float = 5e-8
    storage_overhead: float = 1.5

    def __post_init__(self):
        positive = ("dense_peak_int8_macs_per_s", "dense_peak_f16_macs_per_s", "mem_bandwidth_bytes_per_s",
                    "vector_ops_per_s", "num_subsystems", "storage_overhead")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.per_op_overhead_s < 0:
            raise ConfigurationError("per_op_overhead_s must be >= 0")
        if self.max_sparsity_speedup < 1:
            raise ConfigurationError("max_sparsity_speedup must be >= 1")
        if self.precision not in ("int8", "f16"):
            raise ConfigurationError(f"precision must be 'int8' or 'f16', got {self.precision!r}")
        if int(self.num_subsystems) != self.num_subsystems:
            raise ConfigurationError("num_subsystems must be an integer")

    @property
    def dense_peak(self) -> float:
        return self.dense_peak_int8_macs_per_s if self.precision == "int8" else self.dense_peak_f16_macs_per_s

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> HardwareConfig:
        fields = {f.name for f in dataclasses.fields(cls)}
        # keys starting with "_" are comments
        data = {k: v for k, v in raw.items() if not k.startswith("_")}
        unknown = set(data) - fields
        if unknown:
            raise ConfigurationError(f"unknown hardware config keys {sorted(unknown)}")
        return cls(**data)


def default_hw() -> HardwareConfig:
    return HardwareConfig()


def load_hw(path) -> HardwareConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: hardware config must be a JSON object")
    return HardwareConfig.from_dict(raw)


@dataclass(frozen=True)
class OpProfile:
    """Work of one graph node. ``weight_bytes`` is the dense (uncompressed)
    size; the model applies density and index overhead itself."""

    name: str
    kind: str
    mac_count: float = 0.0
    vector_op_count: float = 0.0
    weight_bytes: float = 0.0
    activation_bytes: float = 0.0
    density: float | None = 1.0
    prunable: bool = True  # False for activation x activation products

    def __post_init__(self):
        if self.kind not in (MATMUL, CONV, VECTOR):
            raise ConfigurationError(f"unknown op kind {self.kind!r}")
        if min(self.mac_count, self.vector_op_count, self.weight_bytes, self.activation_bytes) < 0:
            raise ConfigurationError(f"{self.name}: counts must be >= 0")
        if self.kind != VECTOR and not (self.density is not None and 0 < self.density <= 1):
            raise ConfigurationError(f"{self.name}: density must lie in (0, 1]")

    @property
    def is_matmul(self) -> bool:
        return self.kind in (MATMUL, CONV)

    def with_density(self, d: float) -> OpProfile:
        if not self.is_matmul or not self.prunable:
            return self
        return dataclasses.replace(self, density=d)

    def scaled(self, k: int) -> OpProfile:
        """Same op over ``k`` samples: weights are loaded once."""
        return dataclasses.replace(self, mac_count=self.mac_count * k, vector_op_count=self.vector_op_count * k,
                                   activation_bytes=self.activation_bytes * k)


def node_time(p: OpProfile, hw: HardwareConfig) -> tuple[float, str]:
    """Seconds for one op and its bottleneck tag."""
    if p.kind == VECTOR:
        t = p.vector_op_count / hw.vector_ops_per_s
        tag = "vector" if t >= hw.per_op_overhead_s else "overhead"
        return t + hw.per_op_overhead_s, tag
    effective_macs = p.mac_count * max(p.density, 1.0 / hw.max_sparsity_speedup)
    t_compute = effective_macs / hw.dense_peak
    t_mem = (p.weight_bytes * p.density * hw.storage_overhead + p.activation_bytes) / hw.mem_bandwidth_bytes_per_s
    t = max(t_compute, t_mem)
    if hw.per_op_overhead_s > t:
        tag = "overhead"
    else:
        tag = "compute" if t_compute >= t_mem else "memory"
    return t + hw.per_op_overhead_s, tag


@dataclass
class PerfReport:
    op_times: list[float]
    bottlenecks: list[str]
    total_s: float
    throughput: float  # samples / s
    matmul_fraction: float

    def bottleneck_mode(self) -> str:
        """Bottleneck tag carrying the most total time."""
        share = Counter()
        for t, tag in zip(self.op_times, self.bottlenecks):
            share[tag] += t
        return max(sorted(share), key=lambda k: share[k])


def graph_latency(profiles, hw: HardwareConfig, batch: int = 1) -> PerfReport:
    """Sequential single-subsystem latency of ``profiles`` (which describe ``batch`` samples)."""
    profiles = list(profiles)
    if not profiles:
        raise ConfigurationError("graph_latency needs at least one op")
    times, tags = zip(*(node_time(p, hw) for p in profiles))
    total = math.fsum(times)
    mm = math.fsum(t for t, p in zip(times, profiles) if p.is_matmul)
    if total == 0:  # no work at all
        return PerfReport(list(times), list(tags), 0.0, math.inf, 0.0)
    return PerfReport(list(times), list(tags), total, batch / total, mm / total)


def scale_profiles(profiles, k: int):
    return [p.scaled(k) for p in profiles]


def throughput(profiles, hw: HardwareConfig, batch: int) -> float:
    """Samples/s with ``batch`` per-sample ``profiles`` spread round-robin over
    the subsystems; the most loaded subsystem sets the pace."""
    if batch < 1:
        raise ConfigurationError("batch must be >= 1")
    n = int(hw.num_subsystems)
    most_loaded = -(-batch // n)
    return batch / graph_latency(scale_profiles(profiles, most_loaded), hw, most_loaded).total_s


def at_density(profiles, d: float):
    return [p.with_density(d) for p in profiles]


@dataclass(frozen=True)
class CurveRow:
    factor: float
    latency_s: float
    speedup: float
    bottleneck_mode: str


def speedup_curve(profiles, hw: HardwareConfig, factors=DEFAULT_FACTORS) -> list[CurveRow]:
    """Latency and speedup when every prunable weight has density ``1/s``.

    Requests beyond the hardware cap are evaluated at the cap.
    """
    profiles = list(profiles)
    base = graph_latency(at_density(profiles, 1.0), hw).total_s
    rows = []
    for s in factors:
        if s < 1:
            raise ConfigurationError(f"sparsity factor must be >= 1, got {s}")
        rep = graph_latency(at_density(profiles, 1.0 / min(s, hw.max_sparsity_speedup)), hw)
        speedup = base / rep.total_s if rep.total_s > 0 else 1.0
        rows.append(CurveRow(s, rep.total_s, speedup, rep.bottleneck_mode()))
    return rows


def nonaccelerable_time(profiles, hw: HardwareConfig) -> float:
    """Time no amount of weight sparsity removes: vector work, per-op
    overhead, activation traffic and activation x activation products."""
    parts = []
    for p in profiles:
        parts.append(hw.per_op_overhead_s)
        if p.kind == VECTOR:
            parts.append(p.vector_op_count / hw.vector_ops_per_s)
        elif not p.prunable:
            parts.append(node_time(p, hw)[0] - hw.per_op_overhead_s)
        else:
            parts.append(p.activation_bytes / hw.mem_bandwidth_bytes_per_s)
    return math.fsum(parts)


def amdahl_limit(profiles, hw: HardwareConfig) -> float:
    """Upper bound on any speedup_curve value; ``inf`` if everything accelerates."""
    profiles = list(profiles)
    floor = nonaccelerable_time(profiles, hw)
    if floor == 0:
        return math.inf
    return graph_latency(at_density(profiles, 1.0), hw).total_s / floor
