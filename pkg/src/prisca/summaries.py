"""Point estimates, credible sets and detection decisions from posterior weights.

All time indices exposed here are 1-based, matching the model's time axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class CredibleSet:
    """Smallest set of instants whose posterior mass exceeds ``level``.

    ``indices`` is sorted ascending; the set need not be an interval.
    """

    indices: Tuple[int, ...]
    total_mass: float
    level: float
    peak: float = 0.0

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, t) -> bool:
        return t in self.indices


@dataclass(frozen=True)
class Detection:
    effect: int
    estimate: int
    credible_set: CredibleSet


@dataclass(frozen=True)
class ChangePointReport:
    k_hat: int
    detections: List[Detection] = field(default_factory=list)
    discarded_effects: List[int] = field(default_factory=list)
    T: int = 0

    @property
    def estimates(self) -> List[int]:
        return sorted(d.estimate for d in self.detections)


def _as_alpha(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size == 0:
        raise ValueError("alpha is empty")
    return alpha


def map_estimate(alpha) -> int:
    """Index of the largest posterior weight; the earliest index wins ties."""
    return int(np.argmax(_as_alpha(alpha))) + 1


def credible_set(alpha, p: float) -> CredibleSet:
    alpha = _as_alpha(alpha)
    # stable sort keeps ascending index order among equal weights
    order = np.argsort(-alpha, kind="stable")
    running = np.cumsum(alpha[order])
    above = np.flatnonzero(running > p)
    k = int(above[0]) + 1 if above.size else alpha.size
    members = order[:k]
    return CredibleSet(
        indices=tuple(sorted(int(i) + 1 for i in members)),
        total_mass=float(running[k - 1]),
        level=float(p),
        peak=float(alpha[order[0]]),
    )


def _kept_positions(sets: Sequence[CredibleSet]) -> List[int]:
    order = sorted(range(len(sets)), key=lambda i: -sets[i].peak)
    kept: List[int] = []
    taken: set = set()
    for i in order:
        members = set(sets[i].indices)
        if members & taken:
            continue
        kept.append(i)
        taken |= members
    return sorted(kept)


def dedup_overlaps(sets: Sequence[CredibleSet]) -> List[CredibleSet]:
    """Drop credible sets that share an instant with a more peaked set.

    Sets are visited by decreasing peak posterior weight (input order breaks
    ties); a set survives only if it is disjoint from every earlier survivor.
    Survivors are returned in input order.
    """
    return [sets[i] for i in _kept_positions(sets)]


def detect(fit, p: float | None = None, diffuse_fraction: float | None = None) -> ChangePointReport:
    """Credible set per effect, diffuse filter, overlap removal, then count.

    An effect is diffuse when its credible set holds more than
    ``floor(T * diffuse_fraction)`` instants (half the series by default).
    ``fit`` is anything exposing ``effects`` (a sequence of single-effect
    posteriors) and optionally ``config``.
    """
    config = getattr(fit, "config", None)
    if p is None:
        p = config.p if config is not None else 0.9
    if diffuse_fraction is None:
        diffuse_fraction = config.diffuse_fraction if config is not None else 0.5
    effects = list(fit.effects)
    T = effects[0].alpha.size
    limit = int(np.floor(T * diffuse_fraction))

    candidates, owners, discarded = [], [], []
    for l, eff in enumerate(effects):
        cs = credible_set(eff.alpha, p)
        if len(cs) <= limit:
            candidates.append(cs)
            owners.append(l)
        else:
            discarded.append(l)
    kept = _kept_positions(candidates)
    kept_set = set(kept)
    discarded.extend(owners[i] for i in range(len(candidates)) if i not in kept_set)

    detections = [
        Detection(effect=owners[i], estimate=map_estimate(effects[owners[i]].alpha), credible_set=candidates[i])
        for i in kept
    ]
    return ChangePointReport(
        k_hat=len(detections), detections=detections, discarded_effects=sorted(discarded), T=T
    )
