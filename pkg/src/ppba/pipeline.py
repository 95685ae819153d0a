"""Pipeline commands: generate, enroll, verify, refresh, attack, report.

Every command takes a validated ``PipelineConfig`` and an output root; all
paths below are relative to that root::

    data/<user>.csv                        dataset written by ``generate``
    state/model.json, state/label_map.json classifier and its class order
    state/state.json                       variant, key generation, user groups
    state/matrices/<user>.json             current keys
    state/previous_matrices/<user>.json    keys retired by the last refresh
    reports/*.json, reports/*.csv          machine-readable results
    reports/summary.txt                    aligned text table (``report``)
    recovered/<mode>/<user>.csv            attack reconstructions
    figures/*.png                          rendered by ``report``

Data handling is recomputed identically by every command from the config:
users are split into an enrolled group and an attacker group, each enrolled
user's rows into enrollment rows and held-out test rows, and enrollment
rows into training and validation rows. Normalization bounds are fitted on
enrollment rows only; SMOTE, when enabled, only touches training rows.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ppba import attack, authsys, nn, plotting, privacy, synth
from ppba.config import PipelineConfig
from ppba.dataio import (DataError, Profile, fit_normalizer, load_dataset, normalize,
                         smote_oversample, write_csv, write_dataset)
from ppba.projection import RandomMatrix, project, sample_matrix


class PipelineError(RuntimeError):
    """A command cannot run in the current state of the output directory."""


# -- small IO helpers ---------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def read_json(path: Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise PipelineError(f"missing {path}; run the earlier pipeline steps first") from exc


def _rel(out: Path, value: str) -> Path:
    return Path(out) / value


# -- data preparation ---------------------------------------------------------

@dataclass
class Prepared:
    enrolled: list[str]
    attackers: list[str]
    enroll_rows: list[Profile]    # per enrolled user, everything except test rows
    test_rows: list[Profile]
    attack_profiles: list[Profile]


def group_split(user_ids, fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Random enrolled/attacker partition; at least two users are enrolled."""
    ids = sorted(user_ids)
    n_enroll = min(len(ids), max(2, int(fraction * len(ids) + 0.5)))
    order = np.random.default_rng(seed).permutation(len(ids))
    enrolled = sorted(ids[i] for i in order[:n_enroll])
    attackers = sorted(ids[i] for i in order[n_enroll:])
    return enrolled, attackers


def prepare(cfg: PipelineConfig, out: Path) -> Prepared:
    data_dir = _rel(out, cfg["data.dir"])
    if not data_dir.is_dir():
        raise PipelineError(f"dataset directory {data_dir} does not exist; run 'generate' "
                            "or point data.dir at a CSV directory")
    dataset = load_dataset(data_dir)
    enrolled, attackers = group_split(dataset.user_ids, cfg["groups.enroll_fraction"],
                                      cfg.seed_for("groups"))
    enroll_rows, test_rows = authsys.split_profiles(
        [dataset[u] for u in enrolled], 1.0 - cfg["data.test_fraction"], cfg.seed_for("holdout"))
    bounds = dataset.normalization_bounds
    if bounds is None:
        bounds = fit_normalizer(enroll_rows)
    return Prepared(
        enrolled, attackers,
        [normalize(p, bounds) for p in enroll_rows],
        [normalize(p, bounds) for p in test_rows],
        [normalize(dataset[u], bounds) for u in attackers],
    )


def _train_val(cfg: PipelineConfig, enroll_rows):
    train_p, val_p = authsys.split_profiles(enroll_rows, cfg["data.train_fraction"],
                                            cfg.seed_for("val_split"))
    if cfg["data.smote_target"]:
        train_p = [smote_oversample(p, max(cfg["data.smote_target"], p.m), cfg["data.smote_k"],
                                    cfg.seed_for("smote", i))
                   for i, p in enumerate(train_p)]
    return train_p, val_p


def make_keys(cfg: PipelineConfig, users, d: int, component: str, offset: int = 0):
    return {u: sample_matrix(cfg["projection.k"], d, cfg["projection.phi"],
                             cfg.seed_for(component, offset + i))
            for i, u in enumerate(sorted(users))}


def _policy(cfg: PipelineConfig) -> authsys.VerificationPolicy:
    return authsys.VerificationPolicy(cfg["verify.mode"], cfg["verify.tau"])


def _train_config(cfg: PipelineConfig, epochs: int, seed_component: str) -> nn.TrainConfig:
    return nn.TrainConfig(learning_rate=cfg["train.learning_rate"],
                          batch_size=cfg["train.batch_size"], epochs=epochs,
                          seed=cfg.seed_for(seed_component))


# -- persisted classifier state -----------------------------------------------

def _matrix_dir(out: Path, previous: bool = False) -> Path:
    return out / "state" / ("previous_matrices" if previous else "matrices")


def save_state(out: Path, enrollment: authsys.Enrollment, meta: dict,
               previous: dict | None = None) -> None:
    state = out / "state"
    state.mkdir(parents=True, exist_ok=True)
    nn.save(enrollment.net, state / "model.json")
    write_json(enrollment.label_map, state / "label_map.json")
    write_json(meta, state / "state.json")
    for keys, prev in ((enrollment.matrices, False), (previous, True)):
        if keys:
            target = _matrix_dir(out, prev)
            target.mkdir(parents=True, exist_ok=True)
            for uid, R in sorted(keys.items()):
                R.save(target / f"{uid}.json")


def load_state(out: Path) -> tuple[authsys.Enrollment, dict]:
    meta = read_json(out / "state" / "state.json")
    net = nn.load(out / "state" / "model.json")
    label_map = read_json(out / "state" / "label_map.json")
    matrices = None
    if meta["projected"]:
        matrices = {u: RandomMatrix.load(_matrix_dir(out) / f"{u}.json") for u in meta["enrolled"]}
    return authsys.Enrollment(net, label_map, nn.TrainingHistory(), matrices), meta


def _check_groups(meta: dict, prep: Prepared) -> None:
    if meta["enrolled"] != prep.enrolled:
        raise PipelineError("enrolled users in state/ do not match the current config and data")


def _final(history: nn.TrainingHistory) -> dict:
    return {key: (values[-1] if values else None)
            for key, values in (("loss", history.loss), ("accuracy", history.accuracy),
                                ("val_loss", history.val_loss),
                                ("val_accuracy", history.val_accuracy))}


# -- commands -----------------------------------------------------------------

def cmd_generate(cfg: PipelineConfig, out: Path) -> list[Path]:
    if cfg["data.source"] != "synthetic":
        raise PipelineError("generate only applies to data.source = synthetic")
    spec = synth.SynthSpec(cfg["synth.n_users"], cfg["synth.d"], cfg["synth.m_per_user"],
                           cfg["synth.class_separation"], cfg.seed_for("synth"))
    target = _rel(out, cfg["data.dir"])
    if target.is_dir():
        for stale in target.glob("*.csv"):
            stale.unlink()
    return write_dataset(synth.generate(spec), target)


def standard_claims(cfg: PipelineConfig, enrolled, test_rows, matrices):
    """Self-claims (valid) and derangement claims (invalid) from the test rows."""
    size = cfg["verify.claim_size"]
    valid = authsys.projected_claims(test_rows, matrices, size)
    swap = authsys.derangement(enrolled, cfg.seed_for("derangement"))
    invalid = authsys.projected_claims(test_rows, matrices, size, claimed=swap)
    return valid, invalid


def cmd_enroll(cfg: PipelineConfig, out: Path) -> dict:
    prep = prepare(cfg, out)
    train_p, val_p = _train_val(cfg, prep.enroll_rows)
    d = train_p[0].d
    spec = authsys.BaClassifierSpec(len(prep.enrolled), cfg["classifier.variant"],
                                    cfg["classifier.widths"] or None, cfg["classifier.dropout"])
    matrices = None
    if cfg.projected:
        if cfg["projection.k"] >= d:
            raise PipelineError(f"projection.k={cfg['projection.k']} must be below d={d}")
        matrices = make_keys(cfg, prep.enrolled, d, "enroll_keys")
        train_p = [project(p, matrices[p.user_id]) for p in train_p]
        val_p = [project(p, matrices[p.user_id]) for p in val_p]
    enrollment = authsys.enroll(train_p, spec, _train_config(cfg, cfg["train.epochs"],
                                                             "classifier_train"),
                                validation=val_p, net_seed=cfg.seed_for("classifier_init"))
    enrollment.matrices = matrices
    valid, invalid = standard_claims(cfg, prep.enrolled, prep.test_rows, matrices)
    rates = authsys.measure_error_rates(enrollment.net, enrollment.label_map, valid, invalid,
                                        _policy(cfg))
    total, trainable = enrollment.net.n_params()
    report = {
        "variant": spec.variant,
        "enrolled": prep.enrolled,
        "attackers": prep.attackers,
        "n_features": d,
        "input_dim": enrollment.net.input_dim,
        "stack_widths": list(spec.stack_widths),
        "parameters": {"total": total, "trainable": trainable},
        "epochs_run": enrollment.history.epochs_run,
        "stopped_early": enrollment.history.stopped_early,
        "final": _final(enrollment.history),
        "test": rates.to_dict(),
    }
    meta = {"variant": spec.variant, "projected": cfg.projected, "generation": 0,
            "enrolled": prep.enrolled, "attackers": prep.attackers}
    if _matrix_dir(out, previous=True).is_dir():
        for stale in _matrix_dir(out, previous=True).glob("*.json"):
            stale.unlink()
    save_state(out, enrollment, meta)
    write_json(enrollment.history.to_dict(), out / "reports" / "history.json")
    write_json(report, out / "reports" / "enroll.json")
    return report


def read_claims_file(path: Path, label_map, enrolled, projected: bool) -> list[dict]:
    """Rows of ``claimed_user,data_user,matrix``; ``matrix`` may be empty
    (the data owner's key), an enrolled user's id, or ``fresh``."""
    rows = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"claimed_user", "data_user"} - set(reader.fieldnames or ())
            if missing:
                raise DataError(f"{path}: missing columns {sorted(missing)}")
            for lineno, rec in enumerate(reader, start=2):
                claimed = (rec.get("claimed_user") or "").strip()
                data_user = (rec.get("data_user") or "").strip()
                key = (rec.get("matrix") or "").strip() or data_user
                if claimed not in label_map:
                    raise authsys.UnknownIdentityError(f"{path}:{lineno}: unknown identity {claimed!r}")
                if data_user not in enrolled:
                    raise DataError(f"{path}:{lineno}: no held-out data for {data_user!r}")
                if key != data_user and not projected:
                    raise DataError(f"{path}:{lineno}: the plain variant uses no keys")
                if key not in enrolled and key != "fresh":
                    raise DataError(f"{path}:{lineno}: unknown key {key!r}")
                rows.append({"claimed_user": claimed, "data_user": data_user, "matrix": key})
    except FileNotFoundError as exc:
        raise PipelineError(f"claims file {path} not found") from exc
    if not rows:
        raise DataError(f"{path}: no claims")
    return rows


def _category(row: dict) -> str:
    if row["claimed_user"] != row["data_user"]:
        return "invalid"
    return "valid" if row["matrix"] == row["data_user"] else "wrong_matrix"


def cmd_verify(cfg: PipelineConfig, out: Path) -> dict:
    state, meta = load_state(out)
    prep = prepare(cfg, out)
    _check_groups(meta, prep)
    test = {p.user_id: p for p in prep.test_rows}
    if cfg["verify.claims"]:
        rows = read_claims_file(_rel(out, cfg["verify.claims"]), state.label_map,
                                prep.enrolled, meta["projected"])
    else:
        swap = authsys.derangement(prep.enrolled, cfg.seed_for("derangement"))
        rows = [{"claimed_user": u, "data_user": u, "matrix": u} for u in prep.enrolled]
        rows += [{"claimed_user": swap[u], "data_user": u, "matrix": u} for u in prep.enrolled]
        if cfg["verify.wrong_matrix"] and meta["projected"]:
            rows += [{"claimed_user": u, "data_user": u, "matrix": "fresh"} for u in prep.enrolled]
    fresh = {}
    if meta["projected"]:
        d = prep.test_rows[0].d
        fresh = make_keys(cfg, prep.enrolled, d, "wrong_keys")
    policy = _policy(cfg)
    grouped = {"valid": [], "invalid": [], "wrong_matrix": []}
    records = []
    for row in rows:
        owner = test[row["data_user"]]
        if not meta["projected"]:
            samples = owner.samples
        else:
            key = fresh[row["data_user"]] if row["matrix"] == "fresh" else state.matrices[row["matrix"]]
            samples = project(owner, key).samples
        for claim in authsys.chunk_claims(row["claimed_user"], samples, cfg["verify.claim_size"],
                                          row["data_user"]):
            category = _category(row)
            grouped[category].append(claim)
            res = authsys.verify(state.net, state.label_map, claim, policy)
            records.append(dict(res.to_dict(), data_user=row["data_user"], matrix=row["matrix"],
                                category=category))
    rates = authsys.measure_error_rates(state.net, state.label_map, grouped["valid"],
                                        grouped["invalid"], policy, allow_empty=True)
    report = {
        "policy": {"mode": policy.mode, "tau": policy.tau,
                   "claim_size": cfg["verify.claim_size"]},
        "frr": None, "far": None, "unusability": None,
        "claims": records,
    }
    if grouped["valid"]:
        report["frr"] = {"frr": rates.frr, "sample_frr": rates.sample_frr,
                         "claims": rates.valid_claims, "rows": rates.valid_rows}
    if grouped["invalid"]:
        report["far"] = {"far": rates.far, "sample_far": rates.sample_far,
                         "claims": rates.invalid_claims, "rows": rates.invalid_rows}
    if grouped["wrong_matrix"]:
        unus = authsys.measure_error_rates(state.net, state.label_map, grouped["wrong_matrix"],
                                           [], policy, allow_empty=True)
        report["unusability"] = {"acceptance": unus.acceptance,
                                 "sample_acceptance": unus.sample_acceptance,
                                 "claims": unus.valid_claims, "rows": unus.valid_rows}
    write_json(report, out / "reports" / "verify.json")
    return report


def cmd_refresh(cfg: PipelineConfig, out: Path) -> dict:
    state, meta = load_state(out)
    if not meta["projected"]:
        raise PipelineError("refresh needs a privacy-preserving (projected) enrollment")
    prep = prepare(cfg, out)
    _check_groups(meta, prep)
    policy = _policy(cfg)
    size = cfg["verify.claim_size"]
    before = authsys.measure_error_rates(
        state.net, state.label_map, authsys.projected_claims(prep.test_rows, state.matrices, size),
        [], policy, allow_empty=True)
    generation = meta["generation"] + 1
    d = prep.test_rows[0].d
    new_keys = make_keys(cfg, prep.enrolled, d, "refresh_keys", offset=10_000 * generation)
    result = authsys.refresh(
        state, prep.enroll_rows, prep.test_rows, new_keys,
        _train_config(cfg, cfg["refresh.epochs"], "refresh_train"), policy, size,
        split_fraction=cfg["data.train_fraction"], split_seed=cfg.seed_for("val_split"),
        smote_target=cfg["data.smote_target"] or None, smote_k=cfg["data.smote_k"],
        forget_old_keys=cfg["refresh.forget_old_keys"])
    report = {
        "generation": generation,
        "forget_old_keys": cfg["refresh.forget_old_keys"],
        "epochs_run": result.enrollment.history.epochs_run,
        "final": _final(result.enrollment.history),
        "before": {"frr": before.frr, "sample_frr": before.sample_frr},
        "new_matrix": {"frr": result.new_rates.frr, "sample_frr": result.new_rates.sample_frr},
        "old_matrix": {"acceptance": result.old_matrix_rates.acceptance,
                       "sample_acceptance": result.old_matrix_rates.sample_acceptance},
        "history": result.enrollment.history.to_dict(),
    }
    save_state(out, result.enrollment, dict(meta, generation=generation), previous=state.matrices)
    write_json(report, out / "reports" / "refresh.json")
    return report


def cmd_attack(cfg: PipelineConfig, out: Path) -> dict:
    state, meta = load_state(out)
    if not meta["projected"]:
        raise PipelineError("attacks target projected profiles; the plain variant has none")
    prep = prepare(cfg, out)
    _check_groups(meta, prep)
    modes = cfg["attack.modes"]
    learned = [m for m in modes if m != "min_norm"]
    if learned and not prep.attack_profiles:
        raise PipelineError("learned attacks need attacker profiles; lower groups.enroll_fraction")
    k = cfg["projection.k"]
    victims = [project(p, state.matrices[p.user_id]) for p in prep.enroll_rows]
    truth = prep.enroll_rows
    results = {}
    for index, mode in enumerate(modes):
        training = None
        if mode == "min_norm":
            recovered = attack.recover_min_norm(victims, state.matrices)
        else:
            knowledge = attack.AttackKnowledge(
                mode, cfg["projection.phi"], cfg["attack.matrices_per_profile"],
                tuple(state.matrices[u] for u in prep.enrolled) if mode == "known_matrix" else ())
            corpus = attack.build_attack_corpus(prep.attack_profiles, knowledge, k,
                                                cfg.seed_for("attack_corpus", index))
            spec = attack.AttackModelSpec(k, truth[0].d, cfg["attack.widths"])
            tcfg = dataclasses.replace(
                attack.default_attack_config(cfg.seed_for("attack_model", index),
                                             cfg["attack.epochs"]),
                batch_size=cfg["attack.batch_size"])
            net, history = attack.train_attack_model(corpus, spec, tcfg,
                                                     seed=cfg.seed_for("attack_model", index))
            recovered = attack.recover_profiles(net, victims)
            training = {"corpus_rows": len(corpus), "epochs_run": history.epochs_run,
                        "stopped_early": history.stopped_early,
                        "loss": history.loss, "val_loss": history.val_loss}
        report = privacy.evaluate_distribution_privacy(recovered, truth, cfg["privacy.alpha"], mode)
        rec_dir = out / "recovered" / mode
        rec_dir.mkdir(parents=True, exist_ok=True)
        for p in recovered:
            write_csv(p, rec_dir / f"{p.user_id}.csv")
        (out / "reports").mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "reports" / f"privacy_{mode}.csv")
        results[mode] = dict(report.to_dict(), training=training)
    summary = {"victims": prep.enrolled, "attackers": prep.attackers, "modes": results}
    write_json(summary, out / "reports" / "attack.json")
    return summary


# -- report -------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_table(rows) -> str:
    header = ("section", "metric", "value")
    body = [(s, m, _fmt(v)) for s, m, v in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(3)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_report(cfg: PipelineConfig, out: Path) -> str:
    reports = out / "reports"
    found = {name: reports / f"{name}.json"
             for name in ("enroll", "history", "verify", "refresh", "attack")}
    found = {name: path for name, path in found.items() if path.is_file()}
    if not found:
        raise PipelineError(f"no reports under {reports}; run a pipeline step first")
    data = {name: read_json(path) for name, path in found.items()}
    figures = out / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    rows = []
    if "enroll" in data:
        e = data["enroll"]
        rows += [("enroll", "variant", e["variant"]),
                 ("enroll", "users", len(e["enrolled"])),
                 ("enroll", "parameters", e["parameters"]["total"]),
                 ("enroll", "epochs", e["epochs_run"]),
                 ("enroll", "validation accuracy", e["final"]["val_accuracy"]),
                 ("enroll", "test FRR (claims)", e["test"]["frr"]),
                 ("enroll", "test FAR (claims)", e["test"]["far"]),
                 ("enroll", "test FRR (samples)", e["test"]["sample_frr"]),
                 ("enroll", "test FAR (samples)", e["test"]["sample_far"])]
    if "history" in data:
        plotting.training_history(data["history"], figures / "training_history.png",
                                  "classifier training")
    if "verify" in data:
        v = data["verify"]
        bars = []
        for section, keys in (("frr", ("frr", "sample_frr")), ("far", ("far", "sample_far")),
                              ("unusability", ("acceptance", "sample_acceptance"))):
            if v[section] is None:
                continue
            for key in keys:
                rows.append(("verify", f"{section}: {key}", v[section][key]))
                bars.append((f"{section}: {key}", v[section][key] or 0.0))
        if bars:
            plotting.rate_bars(bars, figures / "verification_rates.png", "verification")
    if "refresh" in data:
        r = data["refresh"]
        rows += [("refresh", "generation", r["generation"]),
                 ("refresh", "FRR before", r["before"]["frr"]),
                 ("refresh", "FRR new keys", r["new_matrix"]["frr"]),
                 ("refresh", "old-key acceptance", r["old_matrix"]["acceptance"]),
                 ("refresh", "old-key sample acceptance", r["old_matrix"]["sample_acceptance"])]
        plotting.rate_bars(
            [("FRR before refresh", r["before"]["frr"] or 0.0),
             ("FRR with new keys", r["new_matrix"]["frr"] or 0.0),
             ("old-key acceptance", r["old_matrix"]["acceptance"] or 0.0),
             ("old-key sample acceptance", r["old_matrix"]["sample_acceptance"] or 0.0)],
            figures / "refresh_rates.png", "key refresh")
    if "attack" in data:
        curves = {}
        for mode, res in sorted(data["attack"]["modes"].items()):
            rows += [(f"attack {mode}", "epsilon (max)", res["epsilon_estimate"]),
                     (f"attack {mode}", "mean fraction", res["mean_fraction"]),
                     (f"attack {mode}", "profiles with recovery",
                      f"{res['profiles_with_recovery']}/{res['n_profiles']}")]
            plotting.pass_fractions(res["per_profile"], figures / f"privacy_{mode}.png",
                                    mode.replace("_", " "))
            if res["training"]:
                curves[mode] = res["training"]
        if curves:
            plotting.attack_losses(curves, figures / "attack_losses.png")
    text = format_table(rows)
    with open(reports / "summary.txt", "w") as fh:
        fh.write(text)
    return text


COMMANDS = {
    "generate": cmd_generate,
    "enroll": cmd_enroll,
    "verify": cmd_verify,
    "refresh": cmd_refresh,
    "attack": cmd_attack,
    "report": cmd_report,
}
