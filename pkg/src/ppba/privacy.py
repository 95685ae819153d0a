"""Two-sample Kolmogorov-Smirnov testing and distribution-privacy scoring."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ppba.dataio import Profile


@dataclass(frozen=True)
class KsResult:
    d_statistic: float
    p_value: float


def kolmogorov_sf(lam: float) -> float:
    """Q(lam) = 2 * sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lam^2), clipped to [0, 1].

    For small lam the alternating series converges slowly, so the
    equivalent theta-function form 1 - sqrt(2 pi)/lam * sum exp(-(2j-1)^2 pi^2 / (8 lam^2))
    is used there instead.
    """
    if lam <= 0.0:
        return 1.0
    if lam < 1.18:
        y = -math.pi ** 2 / (8.0 * lam * lam)
        total = 0.0
        j = 1
        while True:
            term = math.exp((2 * j - 1) ** 2 * y)
            total += term
            if term < 1e-12:
                break
            j += 1
        q = 1.0 - math.sqrt(2.0 * math.pi) / lam * total
    else:
        q = 0.0
        j = 1
        while True:
            term = math.exp(-2.0 * j * j * lam * lam)
            q += term if j % 2 else -term
            if term < 1e-12:
                break
            j += 1
        q *= 2.0
    return min(1.0, max(0.0, q))


def ks_statistic(a, b) -> float:
    """Exact sup |ECDF_a - ECDF_b| evaluated on the merged support."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    support = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, support, side="right") / a.size
    cdf_b = np.searchsorted(b, support, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def ks_two_sample(a, b) -> KsResult:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 values")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("samples must be finite")
    d = ks_statistic(a, b)
    n_e = a.size * b.size / (a.size + b.size)
    root = math.sqrt(n_e)
    lam = (root + 0.12 + 0.11 / root) * d
    return KsResult(d, kolmogorov_sf(lam))


def feature_pass_fraction(recovered: Profile, truth: Profile, alpha: float = 0.05) -> float:
    """Fraction of features whose recovered column is not distinguishable (p >= alpha)."""
    return float(np.mean(feature_passes(recovered, truth, alpha)))


def feature_passes(recovered: Profile, truth: Profile, alpha: float = 0.05) -> np.ndarray:
    if recovered.d != truth.d:
        raise ValueError(f"dimension mismatch: {recovered.d} vs {truth.d}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    return np.array([
        ks_two_sample(recovered.samples[:, j], truth.samples[:, j]).p_value >= alpha
        for j in range(truth.d)
    ])


@dataclass
class PrivacyReport:
    per_profile: dict[str, float]
    alpha: float
    knowledge_mode: str
    per_feature: dict[str, list[bool]] = field(default_factory=dict)

    @property
    def epsilon_estimate(self) -> float:
        """Worst case over profiles: the largest recovered-feature fraction."""
        return max(self.per_profile.values())

    @property
    def mean_fraction(self) -> float:
        return float(np.mean(list(self.per_profile.values())))

    @property
    def profiles_with_recovery(self) -> int:
        return sum(1 for v in self.per_profile.values() if v > 0)

    def to_dict(self) -> dict:
        return {
            "knowledge_mode": self.knowledge_mode,
            "alpha": self.alpha,
            "epsilon_estimate": self.epsilon_estimate,
            "mean_fraction": self.mean_fraction,
            "profiles_with_recovery": self.profiles_with_recovery,
            "n_profiles": len(self.per_profile),
            "per_profile": dict(self.per_profile),
        }

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", "pass_fraction"])
            for uid, frac in self.per_profile.items():
                w.writerow([uid, repr(frac)])


def evaluate_distribution_privacy(recovered: Sequence[Profile], truth: Sequence[Profile],
                                  alpha: float = 0.05,
                                  knowledge_mode: str = "distribution_only") -> PrivacyReport:
    rec = {p.user_id: p for p in recovered}
    tru = {p.user_id: p for p in truth}
    if not rec or not tru:
        raise ValueError("empty profile set")
    if set(rec) != set(tru):
        raise ValueError(f"unpaired profiles: {sorted(set(rec) ^ set(tru))}")
    per_profile, per_feature = {}, {}
    for uid in sorted(tru):
        passes = feature_passes(rec[uid], tru[uid], alpha)
        per_feature[uid] = [bool(x) for x in passes]
        per_profile[uid] = float(np.mean(passes))
    return PrivacyReport(per_profile, alpha, knowledge_mode, per_feature)
