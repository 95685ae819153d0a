"""Command-line driver.

    ppba [--config FILE] [--out DIR] COMMAND [--section.key VALUE ...]

Every configuration key can be given on the command line as a flag of the
same name (``--train.epochs 10`` or ``--train.epochs=10``); flags override
the config file. Exit status: 0 success, 1 configuration error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ppba import config as config_mod
from ppba.config import ConfigError
from ppba.pipeline import COMMANDS

log = logging.getLogger("ppba")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# Convenience flags that are shorthands for configuration keys.
SHORTHANDS = {
    "plain": ("classifier.variant", "plain"),
    "wrong_matrix": ("verify.wrong_matrix", "true"),
}


def build_parser() -> argparse.ArgumentParser:
    # Shared options are accepted before or after the command; SUPPRESS keeps a
    # subcommand's unset option from overwriting a value given before it.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="output root; all paths are relative to it (default .)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="ppba", parents=[common],
                                     description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "generate": "write a seeded synthetic dataset",
        "enroll": "generate keys, project profiles, train the classifier",
        "verify": "run claims against the enrolled classifier",
        "refresh": "rekey every user and update the classifier",
        "attack": "reconstruct victims' profiles and score distribution privacy",
        "report": "write the summary table and figures",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "enroll":
            p.add_argument("--plain", action="store_true",
                           help="train the plain-profile baseline (no projection)")
        if name == "verify":
            p.add_argument("--claims", help="CSV with claimed_user,data_user,matrix columns")
            p.add_argument("--wrong-matrix", dest="wrong_matrix", action="store_true",
                           help="add self-claims projected with never-enrolled keys")
    return parser


def parse_overrides(extra: list[str]) -> dict[str, str]:
    """Turn leftover ``--key value`` / ``--key=value`` tokens into config overrides."""
    overrides = {}
    tokens = list(extra)
    while tokens:
        token = tokens.pop(0)
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        elif tokens and not tokens[0].startswith("--"):
            value = tokens.pop(0)
        else:
            raise ConfigError(f"option --{key} needs a value")
        overrides[key] = value
    return overrides


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    for name, default in (("config", None), ("out", "."), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        overrides = parse_overrides(extra)
        for flag, (key, value) in SHORTHANDS.items():
            if getattr(args, flag, False):
                overrides[key] = value
        if getattr(args, "claims", None):
            overrides["verify.claims"] = args.claims
        cfg = config_mod.load(args.config, overrides)
    except ConfigError as exc:
        print(f"ppba: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        log.info("running %s into %s", args.command, out)
        result = COMMANDS[args.command](cfg, out)
    except Exception as exc:  # every runtime failure maps to one exit status
        log.debug("failure", exc_info=True)
        print(f"ppba: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.command == "report":
        sys.stdout.write(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
