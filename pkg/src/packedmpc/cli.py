"""Command-line entry point.

One flat flag set drives every role.  Values resolve in precedence
order: command-line flag, then PACKEDMPC_* environment variable, then
the config file (the path in PACKEDMPC_CONFIG, else ./packedmpc.conf),
then the built-in default.  The config file holds `key = value` lines
using the flag spellings without the leading dashes; # starts a
comment.

Exit codes: 0 success, 1 the protocol aborted, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from .harness import (ConfigError, ROLES, RunConfig, run_from_config,
                      start_dealer_config)

_FLAGS = ("role", "peer", "listen", "params-file", "circuit", "model",
          "features", "seed", "adversary", "ole-backend", "ot-backend",
          "batch", "report")
_DEFAULTS = {"seed": "run", "ole-backend": "ideal", "ot-backend": "ideal",
             "batch": "1"}
ENV_PREFIX = "PACKEDMPC_"


def _flag_to_env(flag: str) -> str:
    return ENV_PREFIX + flag.replace("-", "_").upper()


def read_config_file(path: str) -> dict:
    """`key = value` lines keyed by flag names; unknown keys are errors."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key or not value:
                raise ConfigError(
                    f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            if key not in _FLAGS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def _env_values(environ) -> dict:
    values = {}
    for flag in _FLAGS:
        value = environ.get(_flag_to_env(flag))
        if value is not None and value != "":
            values[flag] = value
    return values


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="packedmpc",
        description="Actively secure two-party evaluation of layered "
                    "arithmetic circuits, with private model inference.",
        epilog="Every flag can also come from PACKEDMPC_<FLAG> environment "
               "variables or a packedmpc.conf file; flags win over the "
               "environment, which wins over the file.")
    parser.add_argument("--role", choices=ROLES,
                        help="party0 listens, party1 connects, standalone-sim "
                             "runs both sides in-process, dealer serves "
                             "preprocessing")
    parser.add_argument("--peer", help="host:port to connect to (party1)")
    parser.add_argument("--listen", help="host:port to bind (party0, dealer)")
    parser.add_argument("--params-file", help="JSON protocol parameters")
    parser.add_argument("--circuit", help="circuit text file to evaluate")
    parser.add_argument("--model", help="quantized model JSON to evaluate")
    parser.add_argument("--features", help="feature CSV; standalone-sim "
                                           "takes party0.csv,party1.csv")
    parser.add_argument("--seed", help="run seed string (default: run)")
    parser.add_argument("--adversary",
                        help="fault injection, e.g. "
                             "additive-share:layer=2,servers=1+3,delta=5")
    parser.add_argument("--ole-backend",
                        help="ideal or dealer:host:port (default: ideal)")
    parser.add_argument("--ot-backend",
                        help="ideal or dealer:host:port, the dealer's base "
                             "port plus two (default: ideal)")
    parser.add_argument("--batch", type=int,
                        help="instances per run; with --adversary on "
                             "standalone-sim, the trial count (default: 1)")
    parser.add_argument("--report", help="write the JSON report here")
    return parser


def build_config(argv=None, environ=None) -> RunConfig:
    """Resolve flags > environment > config file > defaults."""
    environ = os.environ if environ is None else environ
    args = vars(_parser().parse_args(argv))

    file_path = environ.get(ENV_PREFIX + "CONFIG")
    if file_path:
        if not os.path.exists(file_path):
            raise ConfigError(f"config file {file_path!r} does not exist")
        file_values = read_config_file(file_path)
    elif os.path.exists("packedmpc.conf"):
        file_values = read_config_file("packedmpc.conf")
    else:
        file_values = {}
    env_values = _env_values(environ)

    merged: dict[str, str | None] = {}
    for flag in _FLAGS:
        arg = args.get(flag.replace("-", "_"))
        if arg is not None:
            merged[flag] = str(arg)
        elif flag in env_values:
            merged[flag] = env_values[flag]
        elif flag in file_values:
            merged[flag] = file_values[flag]
        else:
            merged[flag] = _DEFAULTS.get(flag)

    if merged["role"] is None:
        raise ConfigError("missing --role (party0, party1, standalone-sim "
                          "or dealer)")
    try:
        batch = int(merged["batch"])
    except ValueError:
        raise ConfigError(f"batch must be an integer, got {merged['batch']!r}")
    return RunConfig(
        role=merged["role"], peer=merged["peer"], listen=merged["listen"],
        params_file=merged["params-file"], circuit=merged["circuit"],
        model=merged["model"], features=merged["features"],
        seed=merged["seed"], adversary=merged["adversary"],
        ole_backend=merged["ole-backend"], ot_backend=merged["ot-backend"],
        batch=batch, report=merged["report"])


def _run_dealer(config: RunConfig) -> int:
    service = start_dealer_config(config)
    info = {"role": "dealer", "host": service.host,
            "ole_ports": [service.port, service.port + 1],
            "watch_key_port": service.port + 2}
    print(json.dumps(info), flush=True)
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        return 0
    finally:
        service.close()


def main(argv=None) -> int:
    try:
        config = build_config(argv)
        config.validate()
        if config.role == "dealer":
            return _run_dealer(config)
        report = run_from_config(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report, indent=2, sort_keys=True))
    # experiment reports count aborts as a measurement, not a failure
    aborted = (report.get("abort_reason") is not None
               or bool(isinstance(report.get("aborts"), list)
                       and report["aborts"]))
    return 1 if aborted else 0


if __name__ == "__main__":
    sys.exit(main())
