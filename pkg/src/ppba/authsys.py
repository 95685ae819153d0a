"""Classifier-based verification: enrollment, claims, FRR/FAR and rekeying."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ppba import nn
from ppba.dataio import Profile, SplitSpec, smote_oversample, split_indices
from ppba.projection import ProjectedProfile, RandomMatrix, project

PLAIN_WIDTHS = (128, 256, 512, 256, 128)
PRIVACY_WIDTHS = (64, 128, 64)


class UnknownIdentityError(KeyError):
    pass


@dataclass(frozen=True)
class BaClassifierSpec:
    n_classes: int
    variant: str = "privacy_preserving"
    stack_widths: tuple[int, ...] | None = None
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.variant not in ("plain", "privacy_preserving"):
            raise ValueError(f"unknown classifier variant {self.variant!r}")
        if self.n_classes < 2:
            raise ValueError("a classifier needs at least 2 classes")
        if self.stack_widths is None:
            default = PLAIN_WIDTHS if self.variant == "plain" else PRIVACY_WIDTHS
            object.__setattr__(self, "stack_widths", default)
        widths = tuple(int(w) for w in self.stack_widths)
        if not widths or min(widths) < 1:
            raise ValueError("stack_widths must be a non-empty list of positive widths")
        object.__setattr__(self, "stack_widths", widths)
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


def build_classifier(spec: BaClassifierSpec, input_dim: int, seed: int = 0) -> nn.NeuralNet:
    """Stacks of dense -> batch norm -> ReLU -> dropout, then dense(N) -> softmax."""
    layers = []
    for width in spec.stack_widths:
        layers += [nn.dense(width), nn.BATCH_NORM, nn.RELU, nn.dropout(spec.dropout_rate)]
    layers += [nn.dense(spec.n_classes), nn.SOFTMAX]
    return nn.NeuralNet(input_dim, layers, seed)


@dataclass(frozen=True)
class VerificationPolicy:
    mode: str = "majority_argmax"
    tau: float = 0.5

    def __post_init__(self):
        if self.mode not in ("majority_argmax", "mean_probability"):
            raise ValueError(f"unknown aggregation mode {self.mode!r}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")


@dataclass(frozen=True)
class Claim:
    """A verification request: an identity plus n presented rows."""

    claimed_user: str
    samples: np.ndarray
    data_user: str | None = None


@dataclass
class ClaimResult:
    claimed_user: str
    accept: bool
    score: float
    per_sample: np.ndarray

    def to_dict(self) -> dict:
        return {"claimed_user": self.claimed_user, "accept": self.accept,
                "score": self.score, "n_rows": int(self.per_sample.shape[0])}


@dataclass
class ErrorRates:
    """Claim-level FRR/FAR plus the per-sample rates used for accuracy figures."""

    valid_claims: int = 0
    false_rejects: int = 0
    invalid_claims: int = 0
    false_accepts: int = 0
    valid_rows: int = 0
    misclassified_valid_rows: int = 0
    invalid_rows: int = 0
    accepted_invalid_rows: int = 0

    @staticmethod
    def _ratio(a, b):
        return a / b if b else None

    @property
    def frr(self):
        return self._ratio(self.false_rejects, self.valid_claims)

    @property
    def far(self):
        return self._ratio(self.false_accepts, self.invalid_claims)

    @property
    def sample_frr(self):
        return self._ratio(self.misclassified_valid_rows, self.valid_rows)

    @property
    def sample_far(self):
        return self._ratio(self.accepted_invalid_rows, self.invalid_rows)

    @property
    def acceptance(self):
        """Claim-level acceptance of the valid-identity set (1 - FRR)."""
        return None if self.frr is None else 1.0 - self.frr

    @property
    def sample_acceptance(self):
        return None if self.sample_frr is None else 1.0 - self.sample_frr

    def to_dict(self) -> dict:
        return {
            "frr": self.frr, "far": self.far,
            "sample_frr": self.sample_frr, "sample_far": self.sample_far,
            "counts": {
                "valid_claims": self.valid_claims, "false_rejects": self.false_rejects,
                "invalid_claims": self.invalid_claims, "false_accepts": self.false_accepts,
                "valid_rows": self.valid_rows,
                "misclassified_valid_rows": self.misclassified_valid_rows,
                "invalid_rows": self.invalid_rows,
                "accepted_invalid_rows": self.accepted_invalid_rows,
            },
        }


@dataclass
class Enrollment:
    net: nn.NeuralNet
    label_map: dict[str, int]
    history: nn.TrainingHistory
    matrices: dict[str, RandomMatrix] | None = None

    @property
    def validation_accuracy(self) -> float:
        return self.history.val_accuracy[-1]


def _one_hot(labels: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((labels.size, n))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _design(profiles: Sequence, label_map: Mapping[str, int]) -> tuple[np.ndarray, np.ndarray]:
    X = np.vstack([p.samples for p in profiles])
    labels = np.concatenate([np.full(p.samples.shape[0], label_map[p.user_id]) for p in profiles])
    return X, _one_hot(labels, len(label_map))


def split_profiles(profiles: Sequence, fraction: float, seed: int) -> tuple[list, list]:
    """Per-user split; user i uses seed + i so users get independent partitions."""
    first, second = [], []
    for i, p in enumerate(profiles):
        a, b = split_indices(p.samples.shape[0], SplitSpec(fraction, seed + i))
        first.append(_like(p, p.samples[a]))
        second.append(_like(p, p.samples[b]))
    return first, second


def _like(template, samples):
    if isinstance(template, Profile):
        return template.with_samples(samples)
    return ProjectedProfile(template.user_id, template.matrix_id, samples)


def label_map_for(user_ids: Sequence[str]) -> dict[str, int]:
    return {u: i for i, u in enumerate(sorted(user_ids))}


def enroll(profiles: Sequence, spec: BaClassifierSpec, cfg: nn.TrainConfig,
           validation: Sequence | None = None, split_fraction: float = 0.8,
           split_seed: int = 0, net_seed: int = 0,
           net: nn.NeuralNet | None = None) -> Enrollment:
    """Train the verifier's classifier on one profile (plain or projected) per user.

    Without an explicit ``validation`` set, each user's rows are split
    ``split_fraction`` / rest into train and validation. Passing ``net``
    continues training from its current weights.
    """
    if len(profiles) < 2:
        raise ValueError("enrollment needs at least two users")
    dims = {p.samples.shape[1] for p in profiles}
    if len(dims) != 1:
        raise ValueError("profiles disagree on dimension")
    if validation is None:
        profiles, validation = split_profiles(profiles, split_fraction, split_seed)
    label_map = label_map_for([p.user_id for p in profiles])
    if spec.n_classes != len(label_map):
        raise ValueError(f"spec has {spec.n_classes} classes for {len(label_map)} users")
    X, Y = _design(profiles, label_map)
    Xv, Yv = _design(validation, label_map)
    if net is None:
        net = build_classifier(spec, X.shape[1], net_seed)
    history = nn.train(net, X, Y, cfg, validation=(Xv, Yv))
    return Enrollment(net, label_map, history)


def verify(net: nn.NeuralNet, label_map: Mapping[str, int], claim: Claim,
           policy: VerificationPolicy = VerificationPolicy()) -> ClaimResult:
    if claim.claimed_user not in label_map:
        raise UnknownIdentityError(claim.claimed_user)
    rows = np.asarray(claim.samples, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape[0] < 1:
        raise ValueError("a claim needs at least one row")
    probs = nn.predict(net, rows)
    cls = label_map[claim.claimed_user]
    if policy.mode == "majority_argmax":
        score = float(np.mean(probs.argmax(axis=1) == cls))
    else:
        score = float(np.mean(probs[:, cls]))
    return ClaimResult(claim.claimed_user, score >= policy.tau, score, probs)


def chunk_claims(claimed_user: str, samples, claim_size: int,
                 data_user: str | None = None) -> list[Claim]:
    """Cut presented rows into consecutive claims of about ``claim_size`` rows."""
    samples = np.asarray(samples)
    n_claims = max(1, samples.shape[0] // claim_size)
    return [Claim(claimed_user, part, data_user)
            for part in np.array_split(samples, n_claims) if part.shape[0]]


def derangement(user_ids: Sequence[str], seed: int) -> dict[str, str]:
    """Map every user to a different user (Sattolo's single-cycle shuffle)."""
    ids = list(user_ids)
    if len(ids) < 2:
        raise ValueError("a derangement needs at least two users")
    rng = np.random.default_rng(seed)
    perm = list(range(len(ids)))
    for i in range(len(ids) - 1, 0, -1):
        j = int(rng.integers(0, i))
        perm[i], perm[j] = perm[j], perm[i]
    return {ids[i]: ids[perm[i]] for i in range(len(ids))}


def _tally(net, label_map, claims, policy, rates: ErrorRates, valid: bool) -> list[ClaimResult]:
    results = []
    for claim in claims:
        res = verify(net, label_map, claim, policy)
        results.append(res)
        hits = int(np.sum(res.per_sample.argmax(axis=1) == label_map[claim.claimed_user]))
        n = res.per_sample.shape[0]
        if valid:
            rates.valid_claims += 1
            rates.false_rejects += int(not res.accept)
            rates.valid_rows += n
            rates.misclassified_valid_rows += n - hits
        else:
            rates.invalid_claims += 1
            rates.false_accepts += int(res.accept)
            rates.invalid_rows += n
            rates.accepted_invalid_rows += hits
    return results


def measure_error_rates(net, label_map, valid_claims: Sequence[Claim],
                        invalid_claims: Sequence[Claim],
                        policy: VerificationPolicy = VerificationPolicy(),
                        allow_empty: bool = False) -> ErrorRates:
    if not allow_empty and (not valid_claims or not invalid_claims):
        raise ValueError("both valid and invalid claim sets must be non-empty")
    rates = ErrorRates()
    _tally(net, label_map, valid_claims, policy, rates, valid=True)
    _tally(net, label_map, invalid_claims, policy, rates, valid=False)
    return rates


def projected_claims(test_profiles: Sequence[Profile], matrices: Mapping[str, RandomMatrix] | None,
                     claim_size: int, claimed: Mapping[str, str] | None = None) -> list[Claim]:
    """Claims built from each user's held-out rows, projected with ``matrices``.

    ``claimed`` maps data owner -> claimed identity (default: self-claims).
    """
    claims = []
    for p in test_profiles:
        rows = p.samples if matrices is None else project(p, matrices[p.user_id]).samples
        who = p.user_id if claimed is None else claimed[p.user_id]
        claims += chunk_claims(who, rows, claim_size, data_user=p.user_id)
    return claims


def wrong_matrix_trial(net, label_map, test_profiles: Sequence[Profile],
                       fresh_matrices: Mapping[str, RandomMatrix],
                       policy: VerificationPolicy = VerificationPolicy(),
                       claim_size: int = 10) -> ErrorRates:
    """Self-claims projected with keys the classifier never saw.

    The returned ``acceptance``/``sample_acceptance`` measure how usable
    a leaked or guessed-wrong key is; low is good.
    """
    claims = projected_claims(test_profiles, fresh_matrices, claim_size)
    return measure_error_rates(net, label_map, claims, [], policy, allow_empty=True)


@dataclass
class RefreshResult:
    enrollment: Enrollment
    new_rates: ErrorRates
    old_matrix_rates: ErrorRates


def refresh(state: Enrollment, enroll_profiles: Sequence[Profile],
            test_profiles: Sequence[Profile], new_matrices: Mapping[str, RandomMatrix],
            cfg: nn.TrainConfig, policy: VerificationPolicy = VerificationPolicy(),
            claim_size: int = 10, split_fraction: float = 0.8, split_seed: int = 0,
            smote_target: int | None = None, smote_k: int = 5,
            forget_old_keys: bool = False) -> RefreshResult:
    """Rekey every user and keep training the existing classifier on the new projections.

    Returns the updated enrollment, rates for self-claims under the new keys,
    and rates for self-claims still projected with the old keys.

    Plain warm-start training never revisits the regions of input space the
    old keys mapped to, so old-key rows can stay accepted. With
    ``forget_old_keys`` the training rows projected with the old keys are
    added with uniform class targets, which pushes them to "no identity".
    """
    if state.matrices is None:
        raise ValueError("refresh needs an enrollment made from projected profiles")
    missing = set(state.label_map) - set(new_matrices)
    if missing:
        raise ValueError(f"no new matrix for {sorted(missing)}")
    train_p, val_p = split_profiles(list(enroll_profiles), split_fraction, split_seed)
    if smote_target:
        train_p = [smote_oversample(p, max(smote_target, p.m), smote_k, split_seed + i)
                   for i, p in enumerate(train_p)]
    label_map = dict(state.label_map)
    X, Y = _design([project(p, new_matrices[p.user_id]) for p in train_p], label_map)
    Xv, Yv = _design([project(p, new_matrices[p.user_id]) for p in val_p], label_map)
    if forget_old_keys:
        old = np.vstack([project(p, state.matrices[p.user_id]).samples for p in train_p])
        X = np.vstack([X, old])
        Y = np.vstack([Y, np.full((old.shape[0], len(label_map)), 1.0 / len(label_map))])
    net = state.net.copy()
    history = nn.train(net, X, Y, cfg, validation=(Xv, Yv))
    updated = Enrollment(net, label_map, history, dict(new_matrices))
    new_claims = projected_claims(test_profiles, new_matrices, claim_size)
    old_claims = projected_claims(test_profiles, state.matrices, claim_size)
    new_rates = measure_error_rates(updated.net, updated.label_map, new_claims, [], policy,
                                    allow_empty=True)
    old_rates = measure_error_rates(updated.net, updated.label_map, old_claims, [], policy,
                                    allow_empty=True)
    return RefreshResult(updated, new_rates, old_rates)


def keyspace_bits(k: int, d: int, alphabet_size: int) -> float:
    """Brute-force keyspace of a k x d key over ``alphabet_size`` symbols, in bits."""
    if k < 1 or d < 1 or alphabet_size < 1:
        raise ValueError("k, d and alphabet_size must be positive")
    return k * d * math.log2(alphabet_size)
