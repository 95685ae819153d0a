"""Profile reconstruction attacks against projected profiles.

Two attackers are provided: the closed-form minimum-norm preimage of a
known key, and a learned inversion network trained on the attacker's own
profiles projected with either freshly sampled keys or the victims' keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from ppba import nn
from ppba.dataio import Profile
from ppba.projection import (DEFAULT_PHI, ProjectedProfile, RandomMatrix, project_rows,
                             projection_scale, sample_matrix)

MODES = ("distribution_only", "known_matrix")
ATTACK_WIDTHS = (128, 256, 256, 128)


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def min_norm_reconstruct(x_prime, matrix: RandomMatrix, sigma: str = "theoretical") -> np.ndarray:
    """Smallest-norm x with R x equal to the unscaled projection of ``x_prime``.

    Accepts one k-vector or an m x k block of rows. Solves R R^T z = x'
    by Cholesky and returns R^T z.
    """
    xp = np.asarray(x_prime, dtype=np.float64)
    single = xp.ndim == 1
    rows = xp[None, :] if single else xp
    if rows.shape[1] != matrix.k:
        raise ValueError(f"projected rows have {rows.shape[1]} columns, key has k={matrix.k}")
    R = matrix.dense
    if np.linalg.matrix_rank(R) < matrix.k:
        raise SingularMatrixError("R does not have full row rank; R R^T is singular")
    unscaled = rows / projection_scale(matrix, sigma)
    try:
        factor = scipy.linalg.cho_factor(R @ R.T, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"R R^T is not positive definite: {exc}") from exc
    z = scipy.linalg.cho_solve(factor, unscaled.T)
    out = (R.T @ z).T
    return out[0] if single else out


def min_norm_profile(projected: ProjectedProfile, matrix: RandomMatrix) -> Profile:
    return Profile(projected.user_id, min_norm_reconstruct(projected.samples, matrix))


@dataclass(frozen=True)
class AttackKnowledge:
    mode: str = "distribution_only"
    phi: float = DEFAULT_PHI
    matrices_per_profile: int | None = 1
    victim_matrices: tuple[RandomMatrix, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown attack knowledge mode {self.mode!r}")
        if self.matrices_per_profile is not None and self.matrices_per_profile < 1:
            raise ValueError("matrices_per_profile must be at least 1")
        if self.mode == "known_matrix" and not self.victim_matrices:
            raise ValueError("known_matrix mode needs the victims' matrices")
        if self.mode == "distribution_only" and self.matrices_per_profile is None:
            raise ValueError("distribution_only mode needs an explicit matrices_per_profile")


@dataclass
class AttackCorpus:
    """Paired rows: projected input -> plain target."""

    inputs: np.ndarray
    targets: np.ndarray
    matrix_ids: list[str] = field(default_factory=list)
    row_matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return self.inputs.shape[0]


def build_attack_corpus(attack_profiles: Sequence[Profile], knowledge: AttackKnowledge,
                        k: int, seed: int = 0) -> AttackCorpus:
    """Project the attacker's own profiles to build supervised training pairs.

    distribution_only draws ``matrices_per_profile`` fresh keys per profile;
    known_matrix cycles through the victims' keys (all of them per profile
    when ``matrices_per_profile`` is None).
    """
    profiles = list(attack_profiles)
    if not profiles:
        raise ValueError("no attack profiles")
    rng = np.random.default_rng(seed)
    victims = list(knowledge.victim_matrices)
    per = knowledge.matrices_per_profile or len(victims)
    inputs, targets, ids, row_matrix = [], [], [], []
    for i, p in enumerate(profiles):
        for j in range(per):
            if knowledge.mode == "distribution_only":
                mseed = int(rng.integers(0, 2 ** 63 - 1))
                R = sample_matrix(k, p.d, knowledge.phi, mseed, f"attack-{mseed}")
            else:
                R = victims[(i * per + j) % len(victims)]
                if R.k != k or R.d != p.d:
                    raise ValueError(f"victim key {R.matrix_id} is {R.k}x{R.d}, expected {k}x{p.d}")
            if R.matrix_id not in ids:
                ids.append(R.matrix_id)
            inputs.append(project_rows(p.samples, R))
            targets.append(p.samples)
            row_matrix.append(np.full(p.m, ids.index(R.matrix_id)))
    return AttackCorpus(np.vstack(inputs), np.vstack(targets), ids, np.concatenate(row_matrix))


@dataclass(frozen=True)
class AttackModelSpec:
    input_dim: int
    output_dim: int
    stack_widths: tuple[int, ...] = ATTACK_WIDTHS

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if not self.stack_widths or min(self.stack_widths) < 1:
            raise ValueError("stack_widths must be positive")


def build_attack_model(spec: AttackModelSpec, seed: int = 0) -> nn.NeuralNet:
    """Dense -> batch norm -> ReLU stacks with a sigmoid head (outputs in [0, 1])."""
    layers = []
    for width in spec.stack_widths:
        layers += [nn.dense(width), nn.BATCH_NORM, nn.RELU]
    layers += [nn.dense(spec.output_dim), nn.SIGMOID]
    return nn.NeuralNet(spec.input_dim, layers, seed)


def default_attack_config(seed: int = 0, epochs: int = 50) -> nn.TrainConfig:
    return nn.TrainConfig(loss="mean_squared_error", learning_rate=0.001, epochs=epochs,
                          seed=seed, patience=10, min_delta=1e-5)


def train_attack_model(corpus: AttackCorpus, spec: AttackModelSpec, cfg: nn.TrainConfig,
                       val_fraction: float = 0.2, seed: int = 0):
    """Fit the inversion network; returns ``(net, history)``."""
    if len(corpus) == 0:
        raise ValueError("empty attack corpus")
    if cfg.loss != "mean_squared_error":
        raise ValueError("the attack model is trained with mean_squared_error")
    if corpus.inputs.shape[1] != spec.input_dim or corpus.targets.shape[1] != spec.output_dim:
        raise ValueError("corpus shape does not match the attack model spec")
    order = np.random.default_rng(seed).permutation(len(corpus))
    n_val = int(round(val_fraction * len(corpus)))
    val, tr = order[:n_val], order[n_val:]
    net = build_attack_model(spec, seed)
    validation = (corpus.inputs[val], corpus.targets[val]) if n_val else None
    history = nn.train(net, corpus.inputs[tr], corpus.targets[tr], cfg, validation)
    return net, history


def recover_profiles(attack_net: nn.NeuralNet,
                     victims: Sequence[ProjectedProfile]) -> list[Profile]:
    out = []
    for v in victims:
        if v.k != attack_net.input_dim:
            raise ValueError(f"victim {v.user_id} has k={v.k}, attack model expects "
                             f"{attack_net.input_dim}")
        out.append(Profile(v.user_id, attack_net.forward(v.samples, training=False)))
    return out


def recover_min_norm(victims: Sequence[ProjectedProfile],
                     matrices: Mapping[str, RandomMatrix]) -> list[Profile]:
    return [min_norm_profile(v, matrices[v.user_id]) for v in victims]
