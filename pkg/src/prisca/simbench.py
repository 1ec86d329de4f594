"""Simulation study: random variance-change data, PRISCA variants, and scoring."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .engine import auto_fit, fit
from .model import InvalidInputError, ModelConfig, TimeSeries
from .summaries import ChangePointReport, detect

METHODS = ("prisca", "auto", "oracle")
LOG_VARIANCE_SD = math.log(10.0) / 2.0


class InfeasibleSpecError(InvalidInputError):
    pass


@dataclass(frozen=True)
class SimulationSpec:
    T: int
    K: Optional[int] = None
    min_spacing: Optional[float] = None
    log_variance_sd: float = LOG_VARIANCE_SD
    replicates: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.T < 4:
            raise InfeasibleSpecError(f"T={self.T} is too short to place changes in 2..T-2")
        if self.K is None:
            object.__setattr__(self, "K", math.floor(math.sqrt(self.T) / 4))
        if self.min_spacing is None:
            object.__setattr__(self, "min_spacing", min(math.sqrt(self.T), 30.0))
        if self.K < 1:
            raise InfeasibleSpecError(
                f"T={self.T} gives K=floor(sqrt(T)/4)={self.K}: no changes to place"
            )
        if self.K * self.min_spacing >= self.T or self.K > self.T - 3:
            raise InfeasibleSpecError(
                f"cannot place K={self.K} changes with spacing {self.min_spacing:g} in T={self.T}"
            )
        if self.replicates < 0:
            raise InvalidInputError("replicates must be nonnegative")

    @property
    def detection_radius(self) -> float:
        return self.min_spacing / 2.0


@dataclass(frozen=True)
class SimulatedDataset:
    series: TimeSeries
    changes: Tuple[int, ...]
    variances: np.ndarray


def _place_changes(rng: np.random.Generator, T: int, K: int, spacing: float, max_tries: int = 100_000):
    candidates = np.arange(2, T - 1)
    for _ in range(max_tries):
        locs = np.sort(rng.choice(candidates, size=K, replace=False))
        if K == 1 or np.diff(locs).min() >= spacing:
            return tuple(int(t) for t in locs)
    raise InfeasibleSpecError(f"rejection sampling failed after {max_tries} draws")


def generate_dataset(spec: SimulationSpec, index: int) -> SimulatedDataset:
    """Replicate ``index`` of ``spec``; deterministic in ``(spec.seed, index)``.

    Change times are 1-based: the change at ``t`` is the first observation of
    the new segment.
    """
    rng = np.random.default_rng([spec.seed, index])
    changes = _place_changes(rng, spec.T, spec.K, spec.min_spacing)
    variances = np.exp(rng.normal(0.0, spec.log_variance_sd, size=spec.K + 1))
    bounds = np.concatenate(([1], changes, [spec.T + 1]))
    sd = np.repeat(np.sqrt(variances), np.diff(bounds))
    values = rng.standard_normal(spec.T) * sd
    return SimulatedDataset(TimeSeries(values), changes, variances)


def hausdorff_like(estimated: Sequence[int], truth: Sequence[int], T: Optional[int] = None) -> float:
    """Largest distance from a true change to its nearest estimate.

    An empty estimate scores ``T`` (the largest attainable distance).
    """
    truth = np.asarray(sorted(truth), dtype=float)
    if truth.size == 0:
        raise ValueError("true change set is empty")
    estimated = np.asarray(sorted(estimated), dtype=float)
    if estimated.size == 0:
        if T is None:
            raise ValueError("T is required to score an empty estimate")
        return float(T)
    return float(np.abs(truth[:, None] - estimated[None, :]).min(axis=1).max())


def match_detections(report: ChangePointReport, truth: Sequence[int], radius: float):
    """Pair true changes with detections whose point estimate lies within ``radius``.

    Pairs are taken greedily by increasing distance (ties: earlier true
    change, then earlier detection); each side is used at most once.
    Returns ``(true_change, detection)`` tuples.
    """
    pairs = []
    for i, t in enumerate(truth):
        for j, d in enumerate(report.detections):
            dist = abs(d.estimate - t)
            if dist <= radius:
                pairs.append((dist, i, j))
    pairs.sort()
    used_t, used_d, out = set(), set(), []
    for _, i, j in pairs:
        if i in used_t or j in used_d:
            continue
        used_t.add(i)
        used_d.add(j)
        out.append((truth[i], report.detections[j]))
    return out


@dataclass(frozen=True)
class ReplicateScore:
    index: int
    k_true: int
    k_hat: int
    hausdorff: float
    set_lengths: Tuple[int, ...]
    matched: int
    covered: int
    runtime: float
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class BenchmarkMetrics:
    method: str
    T: int
    replicates: int
    bias: float
    hausdorff: float
    mean_set_length: float
    conditional_coverage: float
    mean_runtime_seconds: float
    failures: int = 0
    scores: Tuple[ReplicateScore, ...] = field(default=(), repr=False, compare=False)

    def row(self) -> dict:
        return {
            "method": self.method,
            "T": self.T,
            "reps": self.replicates,
            "bias": self.bias,
            "hausdorff": self.hausdorff,
            "time": self.mean_runtime_seconds,
            "length": self.mean_set_length,
            "cond_cov": self.conditional_coverage,
            "failures": self.failures,
        }


def method_config(method: str, spec: SimulationSpec, base: Optional[ModelConfig] = None) -> ModelConfig:
    base = base or ModelConfig(a0=0.001, p=0.9, epsilon=1e-3)
    if method == "prisca":
        return replace(base, L=max(1, spec.T // 30))
    if method == "oracle":
        return replace(base, L=spec.K)
    if method == "auto":
        return base
    raise InvalidInputError(f"unknown method {method!r}; expected one of {METHODS}")


def drop_baseline(report: ChangePointReport) -> ChangePointReport:
    """Remove detections whose credible set contains instant 1.

    Such an effect rescales the whole series from the start: it absorbs a
    mismatch between the model's fixed baseline variance and the data, not
    a change inside the series.
    """
    kept = [d for d in report.detections if 1 not in d.credible_set]
    dropped = [d.effect for d in report.detections if 1 in d.credible_set]
    return replace(
        report,
        k_hat=len(kept),
        detections=kept,
        discarded_effects=sorted(report.discarded_effects + dropped),
    )


def score_report(
    report: ChangePointReport, truth: Sequence[int], T: int, radius: float, exclude_baseline: bool = True
) -> dict:
    if exclude_baseline:
        report = drop_baseline(report)
    matches = match_detections(report, truth, radius)
    return dict(
        k_hat=report.k_hat,
        hausdorff=hausdorff_like(report.estimates, truth, T),
        set_lengths=tuple(len(d.credible_set) for d in report.detections),
        matched=len(matches),
        covered=sum(t in d.credible_set for t, d in matches),
    )


def run_replicate(spec: SimulationSpec, method: str, index: int, base: Optional[ModelConfig] = None) -> ReplicateScore:
    config = method_config(method, spec, base)
    try:
        data = generate_dataset(spec, index)
        start = time.perf_counter()
        result = auto_fit(data.series, config) if method == "auto" else fit(data.series, config)
        elapsed = time.perf_counter() - start
        report = detect(result)
        scored = score_report(report, data.changes, spec.T, spec.detection_radius)
    except Exception as exc:  # counted, not raised
        return ReplicateScore(index, spec.K, 0, float("nan"), (), 0, 0, float("nan"), failed=True, error=repr(exc))
    return ReplicateScore(index=index, k_true=spec.K, runtime=elapsed, **scored)


def _run_one(args):
    return run_replicate(*args)


def aggregate(method: str, spec: SimulationSpec, scores: Sequence[ReplicateScore]) -> BenchmarkMetrics:
    """Combine replicate scores in index order so sums are reproducible."""
    scores = sorted(scores, key=lambda s: s.index)
    ok = [s for s in scores if not s.failed]
    nan = float("nan")
    if not ok:
        return BenchmarkMetrics(method, spec.T, 0, nan, nan, nan, nan, nan, failures=len(scores), scores=tuple(scores))
    lengths = [n for s in ok for n in s.set_lengths]
    matched = sum(s.matched for s in ok)
    return BenchmarkMetrics(
        method=method,
        T=spec.T,
        replicates=len(ok),
        bias=float(np.mean([s.k_true - s.k_hat for s in ok])),
        hausdorff=float(np.mean([s.hausdorff for s in ok])),
        mean_set_length=float(np.mean(lengths)) if lengths else nan,
        conditional_coverage=sum(s.covered for s in ok) / matched if matched else nan,
        mean_runtime_seconds=float(np.mean([s.runtime for s in ok])),
        failures=len(scores) - len(ok),
        scores=tuple(scores),
    )


def run_benchmark(
    spec: SimulationSpec, method: str = "prisca", jobs: int = 1, base: Optional[ModelConfig] = None
) -> BenchmarkMetrics:
    if method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}; expected one of {METHODS}")
    tasks = [(spec, method, i, base) for i in range(spec.replicates)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        scores = [_run_one(t) for t in tasks]
    return aggregate(method, spec, scores)
