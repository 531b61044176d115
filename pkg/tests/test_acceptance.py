"""Acceptance gate.

Each test covers one numbered criterion, records every sub-check through the
``criterion`` fixture and fails if any sub-check fails.  The terminal summary
prints one PASS/FAIL line per criterion.
"""

import math
import time

import numpy as np
import pytest

from relaylab.cli import run
from relaylab.estimation import VarianceSplit, draw_split_channel
from relaylab.experiments import (
    EST_LEVELS,
    TABLE2_PERFECT,
    SweepSpec,
    calibrate_noise,
    lemma_suite,
    reproduce_esnr_averages,
    reproduce_figures,
    reproduce_table2,
)
from relaylab.mimo import (
    MimoConfig,
    Scheme,
    decomposition_residual,
    esnr_s2_analytic,
    simulate_mimo_all,
)
from relaylab.protocols import (
    Protocol,
    SingleAntennaConfig,
    capacity_worst,
    esnr_analytic,
    esnr_grid_average,
    simulate_destination,
    training_duration,
)
from relaylab.stats import McPlan, derive_seed, derive_stream

pytestmark = pytest.mark.slow

SEED = 1234
N_RANGE = range(1, 7)


def _separated(hi, lo):
    """True if the 95% interval of ``hi`` lies entirely above that of ``lo``."""
    return hi.interval[0] > lo.interval[1]


@pytest.mark.criterion(1)
def test_averaged_esnrs(criterion, capsys):
    t0 = time.perf_counter()
    assert run(["averages", "--k", "7"]) == 0
    elapsed = time.perf_counter() - t0
    rows = [line.split(",") for line in capsys.readouterr().out.splitlines()
            if line.startswith("P")]
    got = {r[0]: float(r[2]) for r in rows}
    for name, target in (("P3", 8.3), ("P2", 3.92), ("P1", 2.67)):
        criterion.check(abs(got[name] - target) <= 0.05, f"{name}={got[name]:.4f} (target {target})")
    criterion.check(elapsed < 1.0, f"runtime {elapsed:.3f}s")
    assert not criterion.failures, criterion.failures


@pytest.mark.criterion(2)
def test_grid_average_ordering(criterion):
    t0 = time.perf_counter()
    bad = []
    for K in range(2, 51):
        p3, p2, p1 = (esnr_grid_average(p, K) for p in (Protocol.P3, Protocol.P2, Protocol.P1))
        if not p3 > p2 > p1:
            bad.append(K)
    elapsed = time.perf_counter() - t0
    criterion.check(not bad, "P3 > P2 > P1 for K=2..50" + (f", violations at K={bad}" if bad else ""))
    criterion.check(elapsed < 1.0, f"runtime {elapsed:.3f}s")
    assert not criterion.failures, criterion.failures


@pytest.mark.criterion(3)
def test_lemma_suite(criterion):
    t0 = time.perf_counter()
    table = lemma_suite((1, 2, 4), 5, McPlan(1_000_000, SEED))
    elapsed = time.perf_counter() - t0
    outside = [r for r in table.rows if not r[-1]]
    worst = max(r[16] for r in table.rows)
    criterion.check(
        not outside,
        f"{len(table.rows) - len(outside)}/{len(table.rows)} analytic values inside the MC 95% CI"
        + (" (outside: " + ", ".join(f"{r[0]} N={r[1]} draw={r[2]} rel={r[16]:.4f}" for r in outside) + ")"
           if outside else ""),
    )
    criterion.check(worst <= 0.02, f"max relative error {worst:.4f}")
    criterion.check(elapsed < 120, f"runtime {elapsed:.1f}s")
    assert not criterion.failures, criterion.failures


@pytest.mark.criterion(4)
def test_fourth_moment(criterion):
    split = VarianceSplit.from_estimate(0.9)
    h_hat = draw_split_channel(split, 1_000_000, derive_stream(SEED, 0)).h_hat
    m4 = float(np.mean(np.abs(h_hat) ** 4))
    target = 2 * split.est**2
    criterion.check(abs(m4 - target) <= 0.03 * target, f"E|h_hat|^4={m4:.4f}, 2 est^2={target:.4f}")
    assert not criterion.failures, criterion.failures


@pytest.mark.criterion(5)
def test_analytic_vs_simulator(criterion):
    cells = []
    for p in Protocol:
        for K in (2, 7, 20):
            for sh in EST_LEVELS:
                for sg in EST_LEVELS:
                    cfg = SingleAntennaConfig.unit(K, sh, sg)
                    plan = McPlan(100_000, derive_seed(SEED, "criterion5", p.value, K, sh, sg))
                    a = esnr_analytic(p, cfg).value
                    mc = simulate_destination(p, cfg, plan)
                    cells.append((p.value, K, sh, sg, mc.contains(a)))
    passed = sum(c[-1] for c in cells)
    misses = [f"{c[0]} K={c[1]} ({c[2]},{c[3]})" for c in cells if not c[-1]]
    criterion.check(
        passed >= 0.95 * len(cells),
        f"{passed}/{len(cells)} cells with the closed form inside the CI"
        + (f", misses: {', '.join(misses)}" if misses else ""),
    )
    assert not criterion.failures, criterion.failures


@pytest.fixture(scope="module")
def table2_unit_noise():
    return reproduce_table2(1.0, McPlan(100_000, SEED))


@pytest.mark.criterion(6)
def test_capacity_properties(criterion, table2_unit_noise):
    cells = table2_unit_noise.cells
    levels = list(reversed(EST_LEVELS))  # row r has forward estimate levels[r]

    def cap(p, sh, sg):
        return cells[p][levels.index(sg)][EST_LEVELS.index(sh)]

    bad32, bad21 = [], []
    for sh in EST_LEVELS:
        for sg in EST_LEVELS:
            c1, c2, c3 = (cap(p, sh, sg) for p in Protocol)
            if not _separated(c3, c2):
                bad32.append(f"({sh},{sg}) P3={c3.bits_per_channel_use:.4f}+-{c3.ci95_half_width:.4f}"
                             f" P2={c2.bits_per_channel_use:.4f}+-{c2.ci95_half_width:.4f}")
            if not c2.bits_per_channel_use >= c1.bits_per_channel_use:
                bad21.append(f"({sh},{sg})")
    criterion.check(not bad32, "(a) C_P3 > C_P2 CI-separated on 9 cells"
                    + (f", fails at {'; '.join(bad32)}" if bad32 else ""))
    criterion.check(not bad21, "(a) C_P2 >= C_P1 on 9 cells" + (f", fails at {bad21}" if bad21 else ""))

    nonmono = []
    for p in Protocol:
        for fixed in EST_LEVELS:
            back = [cap(p, sh, fixed).bits_per_channel_use for sh in EST_LEVELS]
            fwd = [cap(p, fixed, sg).bits_per_channel_use for sg in EST_LEVELS]
            for name, seq in (("backward", back), ("forward", fwd)):
                if not all(a < b for a, b in zip(seq, seq[1:])):
                    nonmono.append(f"{p.value} {name} at {fixed}")
    criterion.check(not nonmono, "(b) increasing in each estimate power"
                    + (f", fails: {nonmono}" if nonmono else ""))

    asym = [p.value for p in Protocol if not _separated(cap(p, 0.9, 0.1), cap(p, 0.1, 0.9))]
    criterion.check(not asym, "(c) C(back 0.9, fwd 0.1) > C(back 0.1, fwd 0.9) CI-separated"
                    + (f", fails for {asym}" if asym else ""))

    zero = [capacity_worst(p, SingleAntennaConfig.unit(7, 0.0, sg), McPlan(100_000, SEED))
            for p in Protocol for sg in EST_LEVELS]
    criterion.check(all(c.bits_per_channel_use == 0.0 for c in zero), "(d) C == 0 exactly at est_h = 0")
    assert not criterion.failures, criterion.failures


@pytest.mark.criterion(7)
def test_table2_calibrated(criterion):
    plan = McPlan(100_000, SEED)
    cal = calibrate_noise(plan)
    result = reproduce_table2(cal.best, plan)
    d1, d2, d3 = (result.deviation(p) for p in Protocol)
    perfect = {p: result.perfect[p].bits_per_channel_use for p in Protocol}
    criterion.check(d1 <= 0.05, f"P1 max |dev| {d1:.4f} at sigma_n^2={cal.best}")
    criterion.check(d2 <= 0.05, f"P2 max |dev| {d2:.4f}")
    # Reported, not gated: P3 deviations and the perfect-CSI P3 value.
    criterion.check(True, f"P3 max |dev| {d3:.4f} (reported)")
    criterion.check(
        perfect[Protocol.P3] == perfect[Protocol.P1],
        f"perfect CSI P3={perfect[Protocol.P3]:.4f} equals P1={perfect[Protocol.P1]:.4f}, "
        f"reference P3 {TABLE2_PERFECT[Protocol.P3]} (reported)",
    )
    assert not criterion.failures, criterion.failures


@pytest.mark.criterion(8)
def test_timing(criterion):
    formulas = all(
        training_duration(Protocol.P1, K) == 2 * K + 1
        and training_duration(Protocol.P2, K) == K + 1
        and training_duration(Protocol.P3, K) == 3
        for K in range(1, 201)
    )
    order = all(
        training_duration(Protocol.P1, K) > training_duration(Protocol.P2, K) >= training_duration(Protocol.P3, K)
        for K in range(2, 201)
    )
    equal = training_duration(Protocol.P2, 2) == training_duration(Protocol.P3, 2) == 3
    criterion.check(formulas, "T_P1=2K+1, T_P2=K+1, T_P3=3 for K=1..200")
    criterion.check(order, "T_P1 > T_P2 >= T_P3 for K=2..200")
    criterion.check(equal, "T_P2 == T_P3 at K=2")
    assert not criterion.failures, criterion.failures


@pytest.fixture(scope="module")
def figure_tables():
    """Figure sweeps at K = 7 and 20 with the default feedforward noise."""
    out = {}
    for K in (7, 20):
        plan = McPlan(100_000, derive_seed(SEED, "figures", K))
        sweeps = (
            SweepSpec("backward", EST_LEVELS, {"forward": 0.9}, plan),
            SweepSpec("forward", EST_LEVELS[:2], {"backward": 0.9}, plan),
        )
        t0 = time.perf_counter()
        table = reproduce_figures(K, 2, N_RANGE, sweeps)
        out[K] = (table, time.perf_counter() - t0)
    return out


def _curve(table, axis, value):
    """``{(scheme, N): (esnr, ci)}`` for one sweep point."""
    return {
        (r[0], r[2]): r[6:8]
        for r in table.rows
        if r[4] == axis and r[5] == value
    }


class _Est:
    def __init__(self, value, ci):
        self.interval = (value - ci, value + ci)
        self.value = value


@pytest.fixture(scope="module")
def ordering_without_feedforward_noise():
    out = {}
    for K in (7, 20):
        for N in N_RANGE:
            cfg = MimoConfig.homogeneous(2, N, K, 0.9, 0.9, sigma_zf_sq=0.0)
            plan = McPlan(100_000, derive_seed(SEED, "criterion9-zf0", K, N))
            out[(K, N)] = simulate_mimo_all(cfg, plan)
    return out


@pytest.mark.criterion(9)
def test_mimo_ordering(criterion, figure_tables, ordering_without_feedforward_noise):
    runtime = 0.0
    for K, (table, elapsed) in figure_tables.items():
        runtime += elapsed
        curve = _curve(table, "backward", 0.9)
        bad = []
        for N in N_RANGE:
            a, b, c = (_Est(*curve[(s, N)]) for s in ("S1a", "S1b", "S2"))
            if not (_separated(a, b) and _separated(b, c)):
                bad.append(N)
        criterion.check(not bad, f"K={K}, sigma_zf^2=0.1: S1a > S1b > S2 CI-separated for N=1..6"
                        + (f", fails at N={bad}" if bad else ""))
    for K in (7, 20):
        bad = []
        for N in N_RANGE:
            r = ordering_without_feedforward_noise[(K, N)]
            if not (_separated(r[Scheme.S1a], r[Scheme.S1b]) and _separated(r[Scheme.S1b], r[Scheme.S2])):
                bad.append(N)
        criterion.check(not bad, f"K={K}, sigma_zf^2=0: S1a > S1b > S2 CI-separated for N=1..6"
                        + (f", fails at N={bad}" if bad else ""))
    criterion.check(runtime < 600, f"figure runtime {runtime:.0f}s")
    assert not criterion.failures, criterion.failures


@pytest.mark.criterion(10)
def test_backward_asymmetry(criterion, figure_tables):
    for K, (table, _) in figure_tables.items():
        for v in EST_LEVELS[:2]:
            back = _curve(table, "forward", v)  # backward 0.9 held, forward v
            fwd = _curve(table, "backward", v)  # forward 0.9 held, backward v
            for s in ("S1a", "S1b", "S2"):
                bad = [N for N in N_RANGE if not _separated(_Est(*back[(s, N)]), _Est(*fwd[(s, N)]))]
                detail = f"K={K} {s} (0.9,{v}) > ({v},0.9)"
                if bad:
                    n = bad[0]
                    detail += (f" fails at N={bad}, e.g. N={n}: {back[(s, n)][0]:.4f} vs "
                               f"{fwd[(s, n)][0]:.4f}")
                criterion.check(not bad, detail)
    assert not criterion.failures, criterion.failures


@pytest.mark.criterion(11)
def test_antenna_trade(criterion, figure_tables):
    curve = _curve(figure_tables[7][0], "backward", 0.9)
    wins = [N for N in range(1, 6)
            if _separated(_Est(*curve[("S2", N + 1)]), _Est(*curve[("S1a", N)]))]
    criterion.check(bool(wins), f"rho_S2(N+1) > rho_S1a(N) CI-separated at N={wins}")
    assert not criterion.failures, criterion.failures


@pytest.mark.criterion(12)
def test_theorem_cross_validation(criterion):
    for N in (1, 2, 3):
        cfg = MimoConfig.homogeneous(2, N, 7, 0.9, 0.9)
        mc = simulate_mimo_all(cfg, McPlan(1_000_000, derive_seed(SEED, "criterion12", N)), (Scheme.S2,))[Scheme.S2]
        reference = esnr_s2_analytic(cfg).value
        exact = esnr_s2_analytic(cfg, exact=True).value
        criterion.check(
            mc.contains(reference),
            f"N={N}: simulator {mc.value:.4f}+-{mc.ci95_half_width:.4f}, "
            f"reference formula {reference:.4f} ({(reference - mc.value) / mc.value:+.1%}), "
            f"exact-noise form {exact:.4f} ({'inside' if mc.contains(exact) else 'outside'} CI)",
        )
    assert not criterion.failures, criterion.failures


@pytest.mark.criterion(13)
def test_decomposition(criterion):
    for M, N in ((1, 2), (2, 1), (2, 3), (3, 2)):
        cfg = MimoConfig.homogeneous(M, N, 7, 0.9, 0.5)
        worst = decomposition_residual(cfg, McPlan(100_000, derive_seed(SEED, "criterion13", M, N)))
        criterion.check(worst <= 1e-12, f"M={M} N={N}: max relative residual {worst:.2e}")
    assert not criterion.failures, criterion.failures


@pytest.mark.criterion(14)
def test_determinism_across_workers(criterion, tmp_path):
    jobs = {
        "esnr": ["esnr", "--protocol", "all", "--k", "7", "--trials", "100000"],
        "capacity": ["capacity", "--trials", "50000"],
        "mimo": ["mimo", "--n", "1..2", "--k", "3", "--trials", "20000", "--chunk-size", "3000"],
        "figures": ["figures", "--n", "1", "--k", "2", "--trials", "5000", "--chunk-size", "1200"],
        "lemma": ["lemma", "--n", "1", "--draws", "2", "--trials", "50000"],
        "table2": ["table2", "--trials", "100000", "--chunk-size", "30000"],
    }
    for name, argv in jobs.items():
        files = []
        for workers in (1, 3):
            path = tmp_path / f"{name}-{workers}.csv"
            assert run(argv + ["--seed", "42", "--workers", str(workers), "--out", str(path)]) == 0
            files.append(path.read_bytes())
        criterion.check(files[0] == files[1], f"{name}: workers 1 vs 3 byte-identical")
    assert not criterion.failures, criterion.failures

