"""Canned reproduction runs and their machine-readable output.

Each experiment returns a :class:`Table`: column names, data rows, the
resolved parameters and any open-question flags that qualify the numbers.
:func:`render` turns a table into CSV or JSON text headed by a
:class:`RunManifest` whose digest covers every data row.

Per-point random seeds come from :func:`relaylab.stats.derive_seed` applied
to the master seed, the experiment id and the point's labels, so experiments
never share random numbers unless that is intended and can run in any order.
"""

import datetime
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .mimo import (
    LemmaIdentity,
    LemmaParams,
    MimoConfig,
    Scheme,
    lemma1_analytic,
    lemma1_mc,
    simulate_mimo_all,
)
from .protocols import (
    Protocol,
    SingleAntennaConfig,
    capacity_sweep,
    esnr_grid_average,
)
from .stats import McPlan, derive_seed

__all__ = [
    "CALIBRATION_GRID",
    "EST_LEVELS",
    "TABLE2",
    "TABLE2_PERFECT",
    "CalibrationResult",
    "RunManifest",
    "SweepSpec",
    "Table",
    "Table2Result",
    "calibrate_noise",
    "default_sweeps",
    "format_float",
    "lemma_params",
    "lemma_suite",
    "render",
    "reproduce_esnr_averages",
    "reproduce_figures",
    "reproduce_table2",
    "table2_table",
]

# Reference capacities, rows forward estimate power 0.9, 0.5, 0.1 and
# columns backward estimate power 0.1, 0.5, 0.9.
EST_LEVELS = (0.1, 0.5, 0.9)
TABLE2 = {
    Protocol.P1: ((0.14, 0.52, 0.84), (0.10, 0.37, 0.56), (0.03, 0.11, 0.17)),
    Protocol.P2: ((0.17, 0.58, 0.87), (0.12, 0.42, 0.64), (0.03, 0.14, 0.22)),
    Protocol.P3: ((0.26, 0.82, 1.26), (0.21, 0.71, 1.11), (0.11, 0.43, 0.74)),
}
TABLE2_PERFECT = {Protocol.P1: 0.99, Protocol.P2: 0.99, Protocol.P3: 1.4}
TABLE2_K = 7
CALIBRATION_GRID = tuple(round(0.1 + 0.05 * i, 2) for i in range(39))


def format_float(x):
    """17 significant digits, enough to round-trip a double."""
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return format(x, ".17g")
    return str(x)


@dataclass
class Table:
    """Rows emitted by one experiment."""

    experiment: str
    columns: tuple
    rows: list
    params: dict
    flags: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def data_lines(self):
        return [",".join(format_float(v) for v in row) for row in self.rows]


@dataclass(frozen=True)
class RunManifest:
    """Provenance of a run.

    The timestamp is reported alongside the output but never written into
    data files, so identical runs produce identical files.
    """

    experiment: str
    params: dict
    seed: int
    version: str
    timestamp: str
    digest: str

    @classmethod
    def for_table(cls, table, seed):
        digest = hashlib.sha256("\n".join(table.data_lines()).encode()).hexdigest()
        now = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        return cls(table.experiment, dict(table.params), int(seed), __version__, now, digest)

    def header(self, flags):
        lines = [
            f"experiment: {self.experiment}",
            f"seed: {self.seed}",
            f"version: {self.version}",
            f"params: {json.dumps(self.params, sort_keys=True)}",
        ]
        if flags:
            lines.append(f"open_questions: {json.dumps(flags, sort_keys=True)}")
        lines.append(f"digest: sha256:{self.digest}")
        return lines


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return format_float(v)
    return v


def render(table, seed, fmt="csv"):
    """Text of ``table`` in ``fmt`` (``"csv"`` or ``"json"``) and its manifest."""
    manifest = RunManifest.for_table(table, seed)
    if fmt == "csv":
        out = [f"# {line}" for line in manifest.header(table.flags)]
        out.append(",".join(table.columns))
        out.extend(table.data_lines())
        return "\n".join(out) + "\n", manifest
    if fmt == "json":
        doc = {
            "manifest": {
                "experiment": manifest.experiment,
                "seed": manifest.seed,
                "version": manifest.version,
                "params": manifest.params,
                "open_questions": table.flags,
                "digest": f"sha256:{manifest.digest}",
            },
            "columns": list(table.columns),
            "rows": [{c: _json_value(v) for c, v in zip(table.columns, row)} for row in table.rows],
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n", manifest
    raise ValueError(f"unknown format {fmt!r}")


# Single-antenna reproductions ---------------------------------------------


def reproduce_esnr_averages(K=7):
    """Grid-averaged closed-form eSNRs as ``(P3, P2, P1)``."""
    if K < 2:
        raise ValueError("K must be >= 2")
    return tuple(esnr_grid_average(p, K) for p in (Protocol.P3, Protocol.P2, Protocol.P1))


def _cell_seed(master_seed, sh, sg):
    # Shared by all protocols of a cell: common random numbers make the
    # protocol comparison within a cell sharper.
    return derive_seed(master_seed, "table2", sh, sg)


@dataclass
class Table2Result:
    """Capacities per protocol laid out like the reference table.

    ``cells[p][r][c]`` holds forward estimate ``EST_LEVELS[::-1][r]`` and
    backward estimate ``EST_LEVELS[c]``.
    """

    sigma_n_sq: float
    cells: dict
    perfect: dict
    seeds: dict

    def deviation(self, protocol):
        """Largest absolute deviation from the reference imperfect-CSI cells."""
        p = Protocol.parse(protocol)
        return max(
            abs(self.cells[p][r][c].bits_per_channel_use - TABLE2[p][r][c])
            for r in range(3)
            for c in range(3)
        )


def reproduce_table2(sigma_n_sq, plan, workers=1):
    """Capacity bounds on the 3 x 3 estimate grid plus perfect CSI, ``K = 7``."""
    if plan.trials < 100_000:
        raise ValueError("capacity table reproduction needs at least 1e5 trials")
    cells = {p: [[None] * 3 for _ in range(3)] for p in Protocol}
    perfect, seeds = {}, {}
    for r, sg in enumerate(reversed(EST_LEVELS)):
        for c, sh in enumerate(EST_LEVELS):
            seed = _cell_seed(plan.master_seed, sh, sg)
            seeds[(sh, sg)] = seed
            cfg = SingleAntennaConfig.unit(TABLE2_K, sh, sg, sigma_n_sq=sigma_n_sq)
            for p in Protocol:
                cells[p][r][c] = capacity_sweep(p, cfg, plan.with_seed(seed), [sigma_n_sq], workers)[0]
    seed = _cell_seed(plan.master_seed, 1.0, 1.0)
    seeds[(1.0, 1.0)] = seed
    cfg = SingleAntennaConfig.unit(TABLE2_K, 1.0, 1.0, sigma_n_sq=sigma_n_sq)
    for p in Protocol:
        perfect[p] = capacity_sweep(p, cfg, plan.with_seed(seed), [sigma_n_sq], workers)[0]
    return Table2Result(float(sigma_n_sq), cells, perfect, seeds)


@dataclass
class CalibrationResult:
    """Outcome of the relay-noise calibration sweep."""

    best: float
    grid: tuple
    deviations: dict  # protocol -> tuple of max-abs deviation per grid point

    def objective(self, k):
        return max(self.deviations[Protocol.P1][k], self.deviations[Protocol.P2][k])


def calibrate_noise(plan, grid=CALIBRATION_GRID, workers=1):
    """Relay noise power that best matches the reference P1 and P2 capacities.

    Minimizes the larger of the P1 and P2 max-abs deviations over the nine
    imperfect-CSI cells.  P3 deviations are computed and returned but do not
    enter the objective.  Uses the same per-cell seeds as
    :func:`reproduce_table2`, so reproducing the table at ``best`` gives the
    same numbers as the sweep.
    """
    grid = tuple(float(v) for v in grid)
    dev = {p: [0.0] * len(grid) for p in Protocol}
    for r, sg in enumerate(reversed(EST_LEVELS)):
        for c, sh in enumerate(EST_LEVELS):
            cell_plan = plan.with_seed(_cell_seed(plan.master_seed, sh, sg))
            cfg = SingleAntennaConfig.unit(TABLE2_K, sh, sg)
            for p in Protocol:
                est = capacity_sweep(p, cfg, cell_plan, grid, workers)
                for k, e in enumerate(est):
                    dev[p][k] = max(dev[p][k], abs(e.bits_per_channel_use - TABLE2[p][r][c]))
    dev = {p: tuple(v) for p, v in dev.items()}
    result = CalibrationResult(grid[0], grid, dev)
    best = min(range(len(grid)), key=lambda k: (result.objective(k), grid[k]))
    result.best = grid[best]
    return result


def table2_table(result, plan, calibration=None):
    """:class:`Table` view of a :class:`Table2Result` with targets and deviations."""
    rows = []
    for p in Protocol:
        for r, sg in enumerate(reversed(EST_LEVELS)):
            for c, sh in enumerate(EST_LEVELS):
                e = result.cells[p][r][c]
                target = TABLE2[p][r][c]
                rows.append(
                    [p.value, TABLE2_K, sh, sg, result.sigma_n_sq, e.bits_per_channel_use,
                     e.ci95_half_width, e.trials, result.seeds[(sh, sg)], target,
                     e.bits_per_channel_use - target]
                )
        e = result.perfect[p]
        target = TABLE2_PERFECT[p]
        rows.append(
            [p.value, TABLE2_K, 1.0, 1.0, result.sigma_n_sq, e.bits_per_channel_use,
             e.ci95_half_width, e.trials, result.seeds[(1.0, 1.0)], target,
             e.bits_per_channel_use - target]
        )
    flags = {
        "sigma_n_sq": "calibrated" if calibration else "fixed",
        "perfect_csi_p3": (
            "formulas give I_P3 = I_P1 at perfect CSI; reference P3 value differs "
            f"(formula {format_float(result.perfect[Protocol.P3].bits_per_channel_use)}, "
            f"reference {TABLE2_PERFECT[Protocol.P3]})"
        ),
        "p3_max_deviation": format_float(result.deviation(Protocol.P3)),
    }
    log = [
        f"table2 sigma_n_sq={result.sigma_n_sq}: max |dev| "
        + ", ".join(f"{p.value}={result.deviation(p):.3f}" for p in Protocol)
    ]
    if calibration is not None:
        k = calibration.grid.index(calibration.best)
        log.insert(0, f"calibration: best sigma_n_sq={calibration.best} objective={calibration.objective(k):.4f}")
    log.append(flags["perfect_csi_p3"])
    return Table(
        "table2",
        ("protocol", "K", "sigma_h_est", "sigma_g_est", "sigma_n2", "capacity", "ci95",
         "trials", "seed", "target", "deviation"),
        rows,
        {"K": TABLE2_K, "sigma_n_sq": result.sigma_n_sq, "trials": plan.trials,
         "chunk_size": plan.chunk_size},
        flags,
        log,
    )


# Moment identities -----------------------------------------------------------

_BAR_CYCLE = ("self", "estimate", "independent")
LEMMA_RANGE = (0.25, 2.0)


def lemma_params(master_seed, identity, N, draw):
    """Random :class:`LemmaParams` for one case of the identity suite.

    Powers are uniform on ``LEMMA_RANGE``; an estimate power is uniform
    between the lower end and its channel power.  The bars of the two
    factorizations cycle through all kinds as ``draw`` advances.
    """
    identity = LemmaIdentity(identity)
    rng = np.random.default_rng(derive_seed(master_seed, "lemma-params", identity.value, N, draw))
    lo, hi = LEMMA_RANGE
    h, g, hp, gp, s, n = rng.uniform(lo, hi, 6)
    h_est = rng.uniform(lo, h)
    g_est = rng.uniform(lo, g)
    return LemmaParams(
        h=h, g=g, h_est=h_est, g_est=g_est, h_prime=hp, g_prime=gp, s=s, n=n,
        h_bar=_BAR_CYCLE[draw % 3], g_bar=_BAR_CYCLE[(draw + 1) % 3],
    )


def lemma_suite(N_values=(1, 2, 4), draws=5, plan=None, identities=tuple(LemmaIdentity), workers=1):
    """Analytic versus Monte Carlo power for every identity, ``N`` and draw."""
    if plan is None:
        plan = McPlan(1_000_000)
    rows = []
    for identity in identities:
        identity = LemmaIdentity(identity)
        for N in N_values:
            for d in range(draws):
                p = lemma_params(plan.master_seed, identity, N, d)
                seed = derive_seed(plan.master_seed, "lemma", identity.value, N, d)
                exact = lemma1_analytic(identity, N, p)
                mc = lemma1_mc(identity, N, p, plan.with_seed(seed), workers)
                rel = abs(mc.mean - exact) / exact if exact else abs(mc.mean)
                rows.append(
                    [identity.value, N, d, p.h, p.g, p.h_est, p.g_est, p.h_prime, p.g_prime,
                     p.s, p.n, p.h_bar, p.g_bar, exact, mc.mean, mc.ci95_half_width, rel,
                     mc.trials, seed, int(mc.contains(exact))]
                )
    return Table(
        "lemma",
        ("identity", "N", "draw", "h", "g", "h_est", "g_est", "h_prime", "g_prime", "s", "n",
         "h_bar", "g_bar", "analytic", "mc", "ci95", "rel_error", "trials", "seed", "inside_ci"),
        rows,
        {"N": list(N_values), "draws": draws, "trials": plan.trials,
         "chunk_size": plan.chunk_size, "identities": [LemmaIdentity(i).value for i in identities]},
    )


# Multi-antenna figures ------------------------------------------------------

_SWEEP_AXES = ("backward", "forward")


@dataclass(frozen=True)
class SweepSpec:
    """One estimate-power sweep of the figure reproduction.

    ``axis`` is ``"backward"`` or ``"forward"``; the other estimate power and
    any other :meth:`MimoConfig.homogeneous` keyword live in ``held``.
    """

    axis: str
    values: tuple
    held: dict
    plan: McPlan

    def __post_init__(self):
        if self.axis not in _SWEEP_AXES:
            raise ValueError(f"axis must be one of {_SWEEP_AXES}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("sweep values must be nonempty")
        steps = [b - a for a, b in zip(vals, vals[1:])]
        if not (all(s > 0 for s in steps) or all(s < 0 for s in steps)):
            raise ValueError("sweep values must be strictly ordered")
        if self.axis in self.held:
            raise ValueError(f"swept axis {self.axis!r} also appears in held")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "held", dict(self.held))

    def config(self, value, M, N, K):
        held = dict(self.held)
        other = "forward" if self.axis == "backward" else "backward"
        est = {self.axis: value, other: held.pop(other, 0.9)}
        return MimoConfig.homogeneous(M, N, K, est["backward"], est["forward"], **held)


def default_sweeps(plan, held=None):
    """Backward sweep at forward 0.9 and the mirrored forward sweep."""
    extra = dict(held or {})
    return (
        SweepSpec("backward", EST_LEVELS, {"forward": 0.9, **extra}, plan),
        SweepSpec("forward", EST_LEVELS, {"backward": 0.9, **extra}, plan),
    )


def reproduce_figures(K, M=2, N_range=range(1, 7), sweep=None, schemes=tuple(Scheme), workers=1):
    """Monte Carlo eSNR rows for every scheme, ``N`` and sweep value.

    Returns a :class:`Table` with columns
    ``scheme, M, N, K, axis, axis_value, esnr, ci95, trials, seed``.
    All schemes of a point share one set of draws.
    """
    if sweep is None:
        raise ValueError("a SweepSpec is required")
    sweeps = sweep if isinstance(sweep, (tuple, list)) else (sweep,)
    schemes = tuple(Scheme.parse(s) for s in schemes)
    rows = []
    held = {}
    for sw in sweeps:
        held[sw.axis] = sw.held
        for N in N_range:
            for value in sw.values:
                cfg = sw.config(value, M, N, K)
                seed = derive_seed(sw.plan.master_seed, "figures", M, N, K, sw.axis, value)
                res = simulate_mimo_all(cfg, sw.plan.with_seed(seed), schemes, workers=workers)
                for s in schemes:
                    e = res[s]
                    rows.append([s.value, M, N, K, sw.axis, value, e.value, e.ci95_half_width,
                                 e.trials, seed])
    first = sweeps[0]
    cfg0 = first.config(first.values[0], M, 1, K)
    flags = {
        "sigma_z_sq": format_float(cfg0.sigma_z_sq[0]),
        "sigma_zf_sq": format_float(cfg0.sigma_zf_sq),
        "sigma_zf_choice": "default 0.1 * sigma_z_sq unless held overrides it",
    }
    params = {
        "K": K, "M": M, "N": list(N_range), "schemes": [s.value for s in schemes],
        "sweeps": {ax: {k: v for k, v in h.items()} for ax, h in held.items()},
        "values": list(first.values), "trials": first.plan.trials,
        "chunk_size": first.plan.chunk_size,
    }
    return Table(
        "figures",
        ("scheme", "M", "N", "K", "axis", "axis_value", "esnr", "ci95", "trials", "seed"),
        rows,
        params,
        flags,
    )
