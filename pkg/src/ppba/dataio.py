"""Profile data model, CSV ingestion, normalization, splitting and SMOTE."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed profile data."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Profile:
    """An m x d matrix of behavioral samples belonging to one user."""

    user_id: str
    samples: np.ndarray
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        samples = _frozen(self.samples)
        if samples.ndim != 2:
            raise DataError(f"profile {self.user_id!r}: samples must be 2-D")
        m, d = samples.shape
        # m == 1 is allowed for verification data; ingestion enforces m >= 2
        if m < 1 or d < 2:
            raise DataError(f"profile {self.user_id!r}: need m >= 1 and d >= 2, got {m}x{d}")
        if not np.all(np.isfinite(samples)):
            raise DataError(f"profile {self.user_id!r}: non-finite entries")
        if self.feature_names is not None:
            names = tuple(str(n) for n in self.feature_names)
            if len(names) != d:
                raise DataError(f"profile {self.user_id!r}: {len(names)} feature names for d={d}")
            object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "samples", samples)

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def with_samples(self, samples) -> "Profile":
        return Profile(self.user_id, samples, self.feature_names)


@dataclass(frozen=True)
class Dataset:
    profiles: tuple[Profile, ...]
    normalization_bounds: np.ndarray | None = None

    def __post_init__(self):
        profiles = tuple(self.profiles)
        if not profiles:
            raise DataError("dataset has no profiles")
        ids = [p.user_id for p in profiles]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate user ids in dataset")
        d = profiles[0].d
        if any(p.d != d for p in profiles):
            raise DataError("profiles disagree on feature count")
        object.__setattr__(self, "profiles", profiles)
        if self.normalization_bounds is not None:
            b = _frozen(self.normalization_bounds)
            if b.shape != (d, 2) or np.any(b[:, 0] > b[:, 1]):
                raise DataError("normalization bounds must be d (min, max) pairs with min <= max")
            object.__setattr__(self, "normalization_bounds", b)

    @property
    def d(self) -> int:
        return self.profiles[0].d

    @property
    def user_ids(self) -> list[str]:
        return [p.user_id for p in self.profiles]

    def __len__(self) -> int:
        return len(self.profiles)

    def __iter__(self):
        return iter(self.profiles)

    def __getitem__(self, user_id: str) -> Profile:
        for p in self.profiles:
            if p.user_id == user_id:
                return p
        raise KeyError(user_id)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_csv(path: str | os.PathLike, user_id: str | None = None) -> Profile:
    """Read one profile from a comma-separated file.

    A first row containing any non-numeric cell is taken as the header.
    NaN/Infinity cells become 0 and exact duplicate rows are dropped,
    keeping the first occurrence.
    """
    path = Path(path)
    if user_id is None:
        user_id = path.stem
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file")

    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = tuple(c.strip() for c in rows[0])
        rows = rows[1:]
    width = len(header) if header is not None else (len(rows[0]) if rows else 0)

    seen = set()
    cleaned = []
    for lineno, row in enumerate(rows, start=2 if header else 1):
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        try:
            values = [float(c) for c in row]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        values = tuple(v if math.isfinite(v) else 0.0 for v in values)
        if values in seen:
            continue
        seen.add(values)
        cleaned.append(values)
    if len(cleaned) < 2:
        raise DataError(f"{path}: fewer than 2 data rows after cleaning")
    return Profile(user_id, np.array(cleaned), header)


def write_csv(profile: Profile, path: str | os.PathLike) -> None:
    names = profile.feature_names or tuple(f"f{j}" for j in range(profile.d))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in profile.samples:
            w.writerow([repr(float(v)) for v in row])


def load_dataset(directory: str | os.PathLike) -> Dataset:
    """Load every ``*.csv`` in ``directory``; the file stem is the user id."""
    directory = Path(directory)
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise DataError(f"no CSV profiles in {directory}")
    return Dataset(tuple(load_csv(f) for f in files))


def write_dataset(dataset: Dataset, directory: str | os.PathLike) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for p in dataset:
        target = directory / f"{p.user_id}.csv"
        write_csv(p, target)
        written.append(target)
    return written


def fit_normalizer(profiles: Dataset | Iterable[Profile]) -> np.ndarray:
    """Per-feature global (min, max) over all given profiles, shape (d, 2)."""
    stacked = np.vstack([p.samples for p in profiles])
    return np.column_stack([stacked.min(axis=0), stacked.max(axis=0)])


def normalize(profile: Profile, bounds) -> Profile:
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.shape != (profile.d, 2):
        raise DataError(f"bounds shape {bounds.shape} does not match d={profile.d}")
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = (profile.samples - lo) / safe
    out = np.where(span > 0, out, 0.0)
    return profile.with_samples(np.clip(out, 0.0, 1.0))


def normalize_dataset(dataset: Dataset, bounds) -> Dataset:
    return Dataset(tuple(normalize(p, bounds) for p in dataset), bounds)


def smote_oversample(profile: Profile, target_m: int, k_neighbors: int = 5,
                     seed: int = 0) -> Profile:
    """Grow ``profile`` to ``target_m`` rows by SMOTE interpolation.

    Original rows come first, unchanged; each synthetic row is
    ``a + u * (b - a)`` with ``b`` one of the ``k_neighbors`` nearest
    original rows to ``a``.
    """
    X = profile.samples
    m = X.shape[0]
    if target_m < m:
        raise ValueError(f"target_m={target_m} is below the current m={m}")
    if k_neighbors < 1 or k_neighbors >= m:
        raise ValueError(f"k_neighbors must be in [1, m-1], got {k_neighbors} for m={m}")
    n_new = target_m - m
    if n_new == 0:
        return profile

    sq = np.sum(X * X, axis=1)
    dist = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(dist, np.inf)
    # stable sort so tied neighbours resolve by row order
    neighbours = np.argsort(dist, axis=1, kind="stable")[:, :k_neighbors]

    rng = np.random.default_rng(seed)
    base = rng.integers(0, m, size=n_new)
    pick = neighbours[base, rng.integers(0, k_neighbors, size=n_new)]
    u = rng.uniform(0.0, 1.0, size=(n_new, 1))
    a, b = X[base], X[pick]
    synthetic = a + u * (b - a)
    return profile.with_samples(np.vstack([X, synthetic]))


def split_indices(m: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(math.floor(spec.train_fraction * m + 0.5))
    if n_train < 1 or n_train >= m:
        raise ValueError(f"split of m={m} at {spec.train_fraction} leaves an empty side")
    order = np.random.default_rng(spec.seed).permutation(m)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split(profile: Profile, spec: SplitSpec) -> tuple[Profile, Profile]:
    train_idx, held_idx = split_indices(profile.m, spec)
    X = profile.samples
    return profile.with_samples(X[train_idx]), profile.with_samples(X[held_idx])


def stack(profiles: Sequence) -> np.ndarray:
    return np.vstack([p.samples for p in profiles])
