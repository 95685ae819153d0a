"""Pipeline configuration: flat ``section.key = value`` files plus flag overrides.

Every component seed is derived from the single master ``seed`` by adding a
fixed offset (see ``SEED_OFFSETS``); keys for user i add i on top of that.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

SEED_OFFSETS = {
    "synth": 0,
    "groups": 1,
    "holdout": 2,
    "val_split": 3,
    "smote": 4,
    "classifier_init": 5,
    "classifier_train": 6,
    "derangement": 7,
    "refresh_train": 8,
    "attack_corpus": 9,
    "attack_model": 10,
    "enroll_keys": 1_000,
    "wrong_keys": 100_000,
    "refresh_keys": 200_000,  # plus 10_000 * refresh generation
}


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"{text!r} is not one of {', '.join(options)}")
        return text
    return parse


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "seed": (int, 7),
    "data.source": (_choice("synthetic", "csv"), "synthetic"),
    "data.dir": (str, "data"),
    "data.test_fraction": (float, 0.2),
    "data.train_fraction": (float, 0.8),
    "data.smote_target": (int, 0),
    "data.smote_k": (int, 5),
    "synth.n_users": (int, 13),
    "synth.d": (int, 24),
    "synth.m_per_user": (int, 240),
    "synth.class_separation": (float, 4.0),
    "groups.enroll_fraction": (float, 0.8),
    "projection.k": (int, 20),
    "projection.phi": (float, 3.0),
    "classifier.variant": (_choice("plain", "privacy_preserving"), "privacy_preserving"),
    "classifier.widths": (_ints, ()),
    "classifier.dropout": (float, 0.1),
    "train.epochs": (int, 50),
    "train.batch_size": (int, 32),
    "train.learning_rate": (float, 0.001),
    "refresh.epochs": (int, 50),
    "refresh.forget_old_keys": (_bool, False),
    "verify.mode": (_choice("majority_argmax", "mean_probability"), "majority_argmax"),
    "verify.tau": (float, 0.5),
    "verify.claim_size": (int, 10),
    "verify.claims": (str, ""),
    "verify.wrong_matrix": (_bool, True),
    "attack.modes": (_words, ("distribution_only", "known_matrix", "min_norm")),
    "attack.matrices_per_profile": (int, 3),
    "attack.widths": (_ints, (128, 256, 256, 128)),
    "attack.epochs": (int, 50),
    "attack.batch_size": (int, 32),
    "privacy.alpha": (float, 0.05),
}

ATTACK_MODES = ("distribution_only", "known_matrix", "min_norm")


@dataclass(frozen=True)
class PipelineConfig:
    values: Mapping[str, Any]

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def projected(self) -> bool:
        return self.values["classifier.variant"] == "privacy_preserving"

    def seed_for(self, component: str, index: int = 0) -> int:
        return self.values["seed"] + SEED_OFFSETS[component] + index

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.values.items())}


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        raw[key] = value
    return raw


def load(path: str | os.PathLike | None = None,
         overrides: Mapping[str, str] | None = None) -> PipelineConfig:
    raw: dict[str, str] = {}
    if path:
        try:
            with open(path) as fh:
                raw.update(parse_text(fh.read(), str(path)))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown option --{key}")
        raw[key] = value
    values = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        else:
            values[key] = default
    cfg = PipelineConfig(values)
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    v = cfg.values
    checks: Iterable[tuple[bool, str]] = [
        (0 < v["data.test_fraction"] < 1, "data.test_fraction must be in (0, 1)"),
        (0 < v["data.train_fraction"] < 1, "data.train_fraction must be in (0, 1)"),
        (v["data.smote_target"] >= 0, "data.smote_target must be >= 0"),
        (v["data.smote_k"] >= 1, "data.smote_k must be >= 1"),
        (v["synth.n_users"] >= 2, "synth.n_users must be >= 2"),
        (v["synth.d"] >= 2 and v["synth.m_per_user"] >= 2, "synth.d and synth.m_per_user must be >= 2"),
        (v["synth.class_separation"] > 0, "synth.class_separation must be positive"),
        (0 < v["groups.enroll_fraction"] <= 1, "groups.enroll_fraction must be in (0, 1]"),
        (v["projection.k"] >= 1, "projection.k must be >= 1"),
        (v["projection.phi"] > 1, "projection.phi must exceed 1"),
        (0 <= v["classifier.dropout"] < 1, "classifier.dropout must be in [0, 1)"),
        (all(w >= 1 for w in v["classifier.widths"]), "classifier.widths must be positive"),
        (v["train.epochs"] >= 1 and v["refresh.epochs"] >= 1 and v["attack.epochs"] >= 1,
         "epoch counts must be >= 1"),
        (v["train.batch_size"] >= 1 and v["attack.batch_size"] >= 1, "batch sizes must be >= 1"),
        (v["train.learning_rate"] > 0, "train.learning_rate must be positive"),
        (0 < v["verify.tau"] <= 1, "verify.tau must be in (0, 1]"),
        (v["verify.claim_size"] >= 1, "verify.claim_size must be >= 1"),
        (all(m in ATTACK_MODES for m in v["attack.modes"]),
         f"attack.modes must be drawn from {', '.join(ATTACK_MODES)}"),
        (v["attack.matrices_per_profile"] >= 1, "attack.matrices_per_profile must be >= 1"),
        (bool(v["attack.widths"]) and all(w >= 1 for w in v["attack.widths"]),
         "attack.widths must be non-empty and positive"),
        (0 < v["privacy.alpha"] < 1, "privacy.alpha must be in (0, 1)"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    if (v["data.source"] == "synthetic" and v["classifier.variant"] == "privacy_preserving"
            and v["projection.k"] >= v["synth.d"]):
        raise ConfigError("projection.k must be smaller than synth.d")
