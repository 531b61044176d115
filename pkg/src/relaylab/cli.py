"""Command-line entry point.

Usage::

    relaylab <command> [--config FILE] [--out PATH] [--format csv|json]
                       [--seed N] [--workers N] [options]

Commands: ``esnr``, ``capacity``, ``timing``, ``lemma``, ``mimo``,
``table2``, ``figures``, ``averages``.  Run ``relaylab <command> -h`` for the
options of each.

Parameters resolve from built-in defaults, then the config file, then the
command line.  The config file holds ``key = value`` lines with ``#``
comments; ``backward.est``-style dotted keys name nested parameters.  Unknown
keys are rejected.  The master seed defaults to ``$RELAYLAB_SEED`` and then
to 0.

Exit status: 0 on success, 2 on argument errors, 3 when a quantity is
undefined for the given variances, 4 on a numerical failure.  Errors are
reported as one JSON object per line on stderr.
"""

import argparse
import json
import os
import sys

from .errors import DegenerateEstimation, NumericalError
from .estimation import VarianceSplit
from .experiments import (
    CALIBRATION_GRID,
    Table,
    SweepSpec,
    calibrate_noise,
    lemma_suite,
    render,
    reproduce_figures,
    reproduce_table2,
    table2_table,
)
from .mimo import LemmaIdentity, MimoConfig, Scheme, simulate_mimo_all
from .protocols import (
    Protocol,
    SingleAntennaConfig,
    capacity_worst,
    esnr_analytic,
    esnr_grid_average,
    simulate_destination,
    training_duration,
)
from .stats import McPlan

__all__ = ["main", "parse_config", "run"]

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE, EXIT_NUMERICAL = 0, 2, 3, 4
SEED_ENV = "RELAYLAB_SEED"


class UsageError(ValueError):
    pass


# Parameter types -----------------------------------------------------------


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    """``"1,2,4"`` or an inclusive range ``"1..6"``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError("empty list")
    return tuple(out)


def _float_list(text):
    vals = tuple(float(p) for p in str(text).split(",") if p.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


def _str_list(text):
    return tuple(p.strip() for p in str(text).split(",") if p.strip())


# name: (parser, default, help)
PARAMS = {
    "k": (int, 7, "relays (per subgroup for MIMO)"),
    "protocol": (str, "all", "P1, P2, P3 or all"),
    "sh2": (float, 0.9, "backward estimate power"),
    "sg2": (float, 0.9, "forward estimate power"),
    "sn2": (float, 1.0, "relay noise power"),
    "backward.total": (float, 1.0, "backward channel power"),
    "forward.total": (float, 1.0, "forward channel power"),
    "rho_s": (float, 1.0, "source power"),
    "rho_R": (float, 1.0, "relay power"),
    "rho_Rf": (float, 1.0, "relay feedforward power"),
    "sigma_s_sq": (float, 1.0, "data power"),
    "sigma_z_sq": (float, 1.0, "destination noise power"),
    "sigma_zf_sq": (float, None, "feedforward noise power"),
    "include_overall_noise": (_bool, False, "add relay and destination noise in simulation"),
    "compound": (str, "gaussian", "P2 compound model: gaussian or product"),
    "trials": (int, 100_000, "Monte Carlo trials"),
    "chunk_size": (int, 4096, "trials per chunk"),
    "m": (int, 2, "source/destination antennas"),
    "n": (_int_list, (2,), "antennas per relay, e.g. 1,2 or 1..6"),
    "schemes": (_str_list, ("S1a", "S1b", "S2"), "schemes to simulate"),
    "values": (_float_list, (0.1, 0.5, 0.9), "swept estimate powers"),
    "held": (float, 0.9, "estimate power held fixed while the other is swept"),
    "calibrate": (_bool, False, "calibrate relay noise before reproducing"),
    "draws": (int, 5, "random variance draws per identity and N"),
    "identity": (_str_list, tuple(i.value for i in LemmaIdentity), "identities to check"),
}
ALIASES = {
    "backward.est": "sh2",
    "forward.est": "sg2",
    "sigma_n_sq": "sn2",
    "chunk-size": "chunk_size",
}
_MODEL = ("rho_s", "rho_R", "rho_Rf", "sigma_s_sq", "sigma_z_sq", "sigma_zf_sq",
          "backward.total", "forward.total")
COMMANDS = {
    "esnr": ("protocol", "k", "sh2", "sg2", "sn2", "include_overall_noise", "compound",
             "trials", "chunk_size") + _MODEL,
    "capacity": ("protocol", "k", "sh2", "sg2", "sn2", "backward.total", "forward.total",
                 "trials", "chunk_size"),
    "timing": ("k",),
    "lemma": ("n", "draws", "identity", "trials", "chunk_size"),
    "mimo": ("m", "n", "k", "sh2", "sg2", "sn2", "schemes", "trials", "chunk_size") + _MODEL,
    "table2": ("sn2", "calibrate", "trials", "chunk_size"),
    "figures": ("m", "n", "k", "values", "held", "sn2", "schemes", "trials", "chunk_size")
    + _MODEL,
    "averages": ("k",),
}
COMMAND_DEFAULTS = {
    "lemma": {"trials": 1_000_000, "n": (1, 2, 4)},
    "figures": {"n": tuple(range(1, 7))},
}


def _canonical(key):
    key = key.strip()
    return ALIASES.get(key, key)


def parse_config(text, allowed):
    """Parse ``key = value`` lines; return raw string values by canonical key."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = _canonical(key)
        if key not in allowed:
            raise UsageError(f"config line {lineno}: unknown key {key.strip()!r}")
        out[key] = value.strip()
    return out


def _flag(key):
    return "--" + key.replace("_", "-").replace(".", "-")


def _build_parser():
    parser = argparse.ArgumentParser(prog="relaylab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value parameter file")
        p.add_argument("--out", help="output file (default stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--seed", type=int, help=f"master seed (default ${SEED_ENV} or 0)")
        p.add_argument("--workers", type=int, default=1, help="threads; never changes results")
        for key in keys:
            p.add_argument(_flag(key), dest=key, default=None, help=PARAMS[key][2])
    return parser


def _resolve(args):
    keys = COMMANDS[args.command]
    defaults = {k: PARAMS[k][1] for k in keys}
    defaults.update({k: v for k, v in COMMAND_DEFAULTS.get(args.command, {}).items() if k in keys})
    raw = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        raw.update(parse_config(text, keys))
    for key in keys:
        value = getattr(args, key)
        if value is not None:
            raw[key] = value
    params = dict(defaults)
    for key, value in raw.items():
        try:
            params[key] = PARAMS[key][0](value)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {exc}") from None
    if args.seed is not None:
        seed = args.seed
    elif os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer") from None
    else:
        seed = 0
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    return params, seed


def _jsonable(params):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def _plan(params, seed):
    return McPlan(params["trials"], seed, params["chunk_size"])


def _protocols(params):
    if params["protocol"].lower() == "all":
        return tuple(Protocol)
    return (Protocol.parse(params["protocol"]),)


def _single_config(params, zf_default=0.0):
    zf = params.get("sigma_zf_sq")
    return SingleAntennaConfig(
        K=params["k"],
        backward=VarianceSplit.from_estimate(params["sh2"], params.get("backward.total", 1.0)),
        forward=VarianceSplit.from_estimate(params["sg2"], params.get("forward.total", 1.0)),
        rho_s=params.get("rho_s", 1.0),
        rho_R=params.get("rho_R", 1.0),
        rho_Rf=params.get("rho_Rf", 1.0),
        sigma_s_sq=params.get("sigma_s_sq", 1.0),
        sigma_n_sq=params["sn2"],
        sigma_z_sq=params.get("sigma_z_sq", 1.0),
        sigma_zf_sq=zf_default if zf is None else zf,
    )


def _mimo_kwargs(params):
    return dict(
        total_h=params["backward.total"],
        total_g=params["forward.total"],
        sigma_s_sq=params["sigma_s_sq"],
        sigma_n_sq=params["sn2"],
        sigma_z_sq=params["sigma_z_sq"],
        sigma_zf_sq=params["sigma_zf_sq"],
        rho_s=params["rho_s"],
        rho_R=params["rho_R"],
        rho_Rf=params["rho_Rf"],
    )


# Commands --------------------------------------------------------------------


def cmd_esnr(params, seed, workers):
    cfg = _single_config(params)
    plan = _plan(params, seed)
    rows = []
    for p in _protocols(params):
        a = esnr_analytic(p, cfg)
        rows.append([p.value, cfg.K, params["sh2"], params["sg2"], "analytic", a.value, 0.0, 0, seed])
        mc = simulate_destination(
            p, cfg, plan, include_overall_noise=params["include_overall_noise"],
            compound=params["compound"], workers=workers,
        )
        rows.append([p.value, cfg.K, params["sh2"], params["sg2"], "monte_carlo", mc.value,
                     mc.ci95_half_width, mc.trials, seed])
    return Table(
        "esnr",
        ("protocol", "K", "sigma_h_est", "sigma_g_est", "method", "esnr", "ci95", "trials", "seed"),
        rows,
        _jsonable(params),
    )


def cmd_capacity(params, seed, workers):
    cfg = _single_config(params)
    plan = _plan(params, seed)
    rows = []
    for p in _protocols(params):
        c = capacity_worst(p, cfg, plan, workers)
        rows.append([p.value, cfg.K, params["sh2"], params["sg2"], params["sn2"],
                     c.bits_per_channel_use, c.ci95_half_width, c.trials, seed])
    return Table(
        "capacity",
        ("protocol", "K", "sigma_h_est", "sigma_g_est", "sigma_n2", "capacity", "ci95",
         "trials", "seed"),
        rows,
        _jsonable(params),
        {"sigma_n_sq": "not fixed by the reference table; see table2 --calibrate"},
    )


def cmd_timing(params, seed, workers):
    K = params["k"]
    rows = [[p.value, K, training_duration(p, K)] for p in Protocol]
    return Table("timing", ("protocol", "K", "training_symbols"), rows, _jsonable(params))


def cmd_averages(params, seed, workers):
    K = params["k"]
    order = (Protocol.P3, Protocol.P2, Protocol.P1)
    rows = [[p.value, K, esnr_grid_average(p, K)] for p in order]
    return Table("averages", ("protocol", "K", "esnr_grid_average"), rows, _jsonable(params))


def cmd_lemma(params, seed, workers):
    identities = tuple(LemmaIdentity(i) for i in params["identity"])
    table = lemma_suite(params["n"], params["draws"], _plan(params, seed), identities, workers)
    table.params = _jsonable(params)
    return table


def cmd_mimo(params, seed, workers):
    schemes = tuple(Scheme.parse(s) for s in params["schemes"])
    plan = _plan(params, seed)
    rows = []
    for N in params["n"]:
        cfg = MimoConfig.homogeneous(params["m"], N, params["k"], params["sh2"], params["sg2"],
                                     **_mimo_kwargs(params))
        res = simulate_mimo_all(cfg, plan, schemes, workers=workers)
        for s in schemes:
            e = res[s]
            rows.append([s.value, cfg.M, N, cfg.K, "backward", params["sh2"], e.value,
                         e.ci95_half_width, e.trials, seed])
    cfg = MimoConfig.homogeneous(params["m"], 1, params["k"], params["sh2"], params["sg2"],
                                 **_mimo_kwargs(params))
    return Table(
        "mimo",
        ("scheme", "M", "N", "K", "axis", "axis_value", "esnr", "ci95", "trials", "seed"),
        rows,
        _jsonable(params),
        {"sigma_z_sq": cfg.sigma_z_sq[0], "sigma_zf_sq": cfg.sigma_zf_sq},
    )


def cmd_table2(params, seed, workers):
    plan = _plan(params, seed)
    calibration = None
    sn2 = params["sn2"]
    if params["calibrate"]:
        calibration = calibrate_noise(plan, CALIBRATION_GRID, workers)
        sn2 = calibration.best
    result = reproduce_table2(sn2, plan, workers)
    table = table2_table(result, plan, calibration)
    table.params = dict(_jsonable(params), sigma_n_sq_used=sn2)
    return table


def cmd_figures(params, seed, workers):
    plan = _plan(params, seed)
    model = _mimo_kwargs(params)
    sweeps = (
        SweepSpec("backward", params["values"], {"forward": params["held"], **model}, plan),
        SweepSpec("forward", params["values"], {"backward": params["held"], **model}, plan),
    )
    schemes = tuple(Scheme.parse(s) for s in params["schemes"])
    table = reproduce_figures(params["k"], params["m"], params["n"], sweeps, schemes, workers)
    table.params = _jsonable(params)
    return table


HANDLERS = {
    "esnr": cmd_esnr,
    "capacity": cmd_capacity,
    "timing": cmd_timing,
    "lemma": cmd_lemma,
    "mimo": cmd_mimo,
    "table2": cmd_table2,
    "figures": cmd_figures,
    "averages": cmd_averages,
}


def _diagnostic(kind, message, code, **extra):
    doc = {"error": kind, "message": str(message), "exit_code": code, **extra}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def run(argv):
    """Run the CLI on ``argv`` and return the exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        params, seed = _resolve(args)
        table = HANDLERS[args.command](params, seed, args.workers)
        text, manifest = render(table, seed, args.format)
    except DegenerateEstimation as exc:
        return _diagnostic("DegenerateEstimation", exc, EXIT_DEGENERATE, vanished=list(exc.vanished))
    except NumericalError as exc:
        return _diagnostic("NumericalError", exc, EXIT_NUMERICAL)
    except (UsageError, ValueError, TypeError) as exc:
        return _diagnostic("ArgumentError", exc, EXIT_USAGE)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for line in table.log:
        print(f"relaylab: {line}", file=sys.stderr)
    print(
        json.dumps({"manifest": manifest.experiment, "digest": manifest.digest,
                    "timestamp": manifest.timestamp}, sort_keys=True),
        file=sys.stderr,
    )
    return EXIT_OK


def main(argv=None):
    return run(sys.argv[1:] if argv is None else argv)
