"""Sparse ternary random matrices, random projection and JL dimension bounds."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ppba.dataio import Profile

DEFAULT_PHI = 3.0


@dataclass(frozen=True)
class RandomMatrix:
    """A k x d secret key with entries in {-1, 0, +1}."""

    entries: np.ndarray
    phi: float = DEFAULT_PHI
    seed: int | None = None
    matrix_id: str = ""

    def __post_init__(self):
        e = np.array(self.entries, dtype=np.int8)
        if e.ndim != 2:
            raise ValueError("matrix entries must be 2-D")
        if not np.all(np.isin(e, (-1, 0, 1))):
            raise ValueError("matrix entries must be -1, 0 or +1")
        k, d = e.shape
        if k < 1 or k > d:
            raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
        if not self.phi >= 1.0:
            raise ValueError(f"phi must be >= 1, got {self.phi}")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "phi", float(self.phi))
        if not self.matrix_id:
            object.__setattr__(self, "matrix_id", f"R{self.seed}-{k}x{d}")

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def d(self) -> int:
        return self.entries.shape[1]

    @property
    def dense(self) -> np.ndarray:
        return self.entries.astype(np.float64)

    def to_dict(self) -> dict:
        return {
            "matrix_id": self.matrix_id,
            "k": self.k,
            "d": self.d,
            "phi": self.phi,
            "seed": self.seed,
            "entries": self.entries.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RandomMatrix":
        try:
            k, d = int(obj["k"]), int(obj["d"])
            flat = np.asarray(obj["entries"], dtype=np.int64)
            if flat.size != k * d:
                raise ValueError(f"entries has {flat.size} values, expected {k * d}")
            return cls(flat.reshape(k, d), obj["phi"], obj.get("seed"), obj["matrix_id"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed matrix record: {exc}") from exc

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RandomMatrix":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class ProjectedProfile:
    user_id: str
    matrix_id: str
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError("projected samples must be a non-empty 2-D array")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def k(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class JlParams:
    n: int
    epsilon: float
    beta: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        # epsilon = 1 still leaves eps^2/2 - eps^3/3 = 1/6 > 0
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")


def sample_matrix(k: int, d: int, phi: float = DEFAULT_PHI, seed: int = 0,
                  matrix_id: str | None = None) -> RandomMatrix:
    """Draw a k x d matrix with P(+1) = P(-1) = 1/(2 phi), P(0) = 1 - 1/phi."""
    if not 1 <= k < d:
        raise ValueError(f"need 1 <= k < d, got k={k}, d={d}")
    return RandomMatrix(draw_ternary(k, d, phi, seed), phi, seed, matrix_id or "")


def draw_ternary(k: int, d: int, phi: float = DEFAULT_PHI, seed: int = 0) -> np.ndarray:
    """The raw k x d ternary draw behind ``sample_matrix``, without requiring k < d.

    Useful for checking distance preservation when the JL bound asks for
    more rows than the input has columns.
    """
    if k < 1 or d < 1:
        raise ValueError(f"need positive dimensions, got k={k}, d={d}")
    if not phi > 1.0:
        raise ValueError(f"phi must exceed 1, got {phi}")
    u = np.random.default_rng(seed).random((k, d))
    tail = 1.0 / (2.0 * phi)
    entries = np.zeros((k, d), dtype=np.int8)
    entries[u < tail] = 1
    entries[u >= 1.0 - tail] = -1
    return entries


def identity_matrix(d: int, phi: float = DEFAULT_PHI, matrix_id: str = "identity") -> RandomMatrix:
    """k = d identity key; a test fixture and the attack's invertible control."""
    return RandomMatrix(np.eye(d, dtype=np.int8), phi, None, matrix_id)


def theoretical_sigma(phi: float) -> float:
    if phi < 1.0:
        raise ValueError(f"phi must be >= 1, got {phi}")
    return math.sqrt(1.0 / phi)


def projection_scale(matrix: RandomMatrix, sigma: str = "theoretical") -> float:
    """The factor 1 / (sqrt(k) * sigma_r) applied after multiplying by R."""
    if sigma == "theoretical":
        s = theoretical_sigma(matrix.phi)
    elif sigma == "empirical":
        s = float(np.std(matrix.dense))
        if s == 0.0:
            raise ValueError("empirical sigma of an all-zero matrix is 0")
    else:
        raise ValueError(f"unknown sigma mode {sigma!r}")
    return 1.0 / (math.sqrt(matrix.k) * s)


def project_rows(X: np.ndarray, matrix: RandomMatrix, sigma: str = "theoretical") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != matrix.d:
        raise ValueError(f"row dimension {X.shape[-1]} does not match matrix d={matrix.d}")
    return projection_scale(matrix, sigma) * (X @ matrix.dense.T)


def project(profile: Profile, matrix: RandomMatrix, sigma: str = "theoretical") -> ProjectedProfile:
    return ProjectedProfile(profile.user_id, matrix.matrix_id,
                            project_rows(profile.samples, matrix, sigma))


def jl_min_dimension(params: JlParams, include_log: bool = True) -> float:
    """Minimum projected dimension k0 = (4 + 2 beta) / (eps^2/2 - eps^3/3) * ln(n).

    With ``include_log=False`` only the prefactor is returned.
    """
    eps = params.epsilon
    denom = eps ** 2 / 2.0 - eps ** 3 / 3.0
    if denom <= 0:
        raise ValueError(f"eps^2/2 - eps^3/3 is not positive for eps={eps}")
    prefactor = (4.0 + 2.0 * params.beta) / denom
    return prefactor * math.log(params.n) if include_log else prefactor


def distance_distortion(pairs: Iterable[Sequence], matrix: RandomMatrix,
                        sigma: str = "theoretical") -> list[float]:
    """Squared-distance ratio after/before projection for each non-degenerate pair."""
    ratios = []
    for x, y in pairs:
        diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        before = float(diff @ diff)
        if before == 0.0:
            continue
        proj = project_rows(diff, matrix, sigma)
        ratios.append(float(proj @ proj) / before)
    if not ratios:
        raise ValueError("every pair was degenerate (x == y)")
    return ratios
