"""Multi-antenna relaying with relay partitioning.

An ``M``-antenna source talks to an ``M``-antenna destination through
``M K`` relays with ``N`` antennas each.  The relays are split into ``M``
disjoint subgroups and subgroup ``x`` serves the antenna pair ``x``.  Each
relay matched filters with its backward channel to antenna ``x``, then with
its forward channel to antenna ``x``, and normalizes to unit average power.

Three schemes differ in relay CSI and in the effective CSI the destination
uses for decoding:

========  ================  =====================================
scheme    relay filters     destination CSI
========  ================  =====================================
S1a       true channels     exact effective CSI (genie)
S1b       estimates         exact effective CSI (genie)
S2        estimates         feedforwarded estimate, noisy link
========  ================  =====================================

Channel statistics are indexed ``backward[x][y]`` for the link from source
antenna ``y`` to a relay of subgroup ``x`` and ``forward[x][y]`` for the
link from a relay of subgroup ``x`` to destination antenna ``y``.
"""

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateEstimation, NumericalError
from .estimation import VarianceSplit
from .protocols import EsnrEstimate, Method
from .stats import rowsum, run_trials, standard_draws

__all__ = [
    "DECOMPOSITION_TOLERANCE",
    "LemmaIdentity",
    "LemmaParams",
    "MimoConfig",
    "Scheme",
    "decomposition_residual",
    "esnr_s2_analytic",
    "feedforward_power",
    "lemma1_analytic",
    "lemma1_mc",
    "noise_uncorrelatedness",
    "partition_relays",
    "s2_terms",
    "simulate_mimo",
    "simulate_mimo_all",
]

DECOMPOSITION_TOLERANCE = 1e-12


class Scheme(enum.Enum):
    S1a = "S1a"
    S1b = "S1b"
    S2 = "S2"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value.lower() == str(value).lower():
                return member
        raise ValueError(f"unknown scheme {value!r}; expected S1a, S1b or S2")


def _square(values, M, name):
    rows = tuple(tuple(r) for r in values)
    if len(rows) != M or any(len(r) != M for r in rows):
        raise ValueError(f"{name} must be {M} x {M}")
    for r in rows:
        for v in r:
            if not isinstance(v, VarianceSplit):
                raise TypeError(f"{name} entries must be VarianceSplit")
    return rows


def _vector(values, M, name, positive=False):
    vals = tuple(float(v) for v in values)
    if len(vals) != M:
        raise ValueError(f"{name} must have {M} entries")
    for v in vals:
        if not (v > 0 if positive else v >= 0):
            raise ValueError(f"{name} entries must be {'> 0' if positive else '>= 0'}")
    return vals


@dataclass(frozen=True)
class MimoConfig:
    """Scalars of the partitioned multi-antenna relay network.

    Parameters
    ----------
    M, N, K : int
        Source/destination antennas, antennas per relay, relays per subgroup.
    backward, forward : M x M nested tuples of VarianceSplit
        Channel statistics, see the module docstring for indexing.
    sigma_s_sq : tuple of float
        Data power of each source antenna.
    sigma_n_sq : tuple of float
        Relay noise power per subgroup.
    sigma_z_sq : tuple of float
        Noise power per destination antenna.
    sigma_zf_sq : float
        Noise power on the feedforward link.
    rho_s, rho_R, rho_Rf : float
        Source power, relay data power, relay feedforward power.
    """

    M: int
    N: int
    K: int
    backward: tuple
    forward: tuple
    sigma_s_sq: tuple
    sigma_n_sq: tuple
    sigma_z_sq: tuple
    sigma_zf_sq: float
    rho_s: float = 1.0
    rho_R: float = 1.0
    rho_Rf: float = 1.0

    def __post_init__(self):
        for name in ("M", "N", "K"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))
        M = self.M
        object.__setattr__(self, "backward", _square(self.backward, M, "backward"))
        object.__setattr__(self, "forward", _square(self.forward, M, "forward"))
        object.__setattr__(self, "sigma_s_sq", _vector(self.sigma_s_sq, M, "sigma_s_sq", True))
        object.__setattr__(self, "sigma_n_sq", _vector(self.sigma_n_sq, M, "sigma_n_sq"))
        object.__setattr__(self, "sigma_z_sq", _vector(self.sigma_z_sq, M, "sigma_z_sq"))
        if not self.sigma_zf_sq >= 0:
            raise ValueError("sigma_zf_sq must be >= 0")
        for name in ("rho_s", "rho_R", "rho_Rf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @classmethod
    def homogeneous(
        cls,
        M,
        N,
        K,
        est_h,
        est_g,
        total_h=1.0,
        total_g=1.0,
        sigma_s_sq=1.0,
        sigma_n_sq=1.0,
        sigma_z_sq=1.0,
        sigma_zf_sq=None,
        **kw,
    ):
        """Identical statistics for every link, antenna and subgroup.

        ``sigma_zf_sq`` defaults to a tenth of ``sigma_z_sq``.
        """
        h = VarianceSplit.from_estimate(est_h, total_h)
        g = VarianceSplit.from_estimate(est_g, total_g)
        if sigma_zf_sq is None:
            sigma_zf_sq = 0.1 * sigma_z_sq
        return cls(
            M=M,
            N=N,
            K=K,
            backward=((h,) * M,) * M,
            forward=((g,) * M,) * M,
            sigma_s_sq=(sigma_s_sq,) * M,
            sigma_n_sq=(sigma_n_sq,) * M,
            sigma_z_sq=(sigma_z_sq,) * M,
            sigma_zf_sq=sigma_zf_sq,
            **kw,
        )

    def with_(self, **changes):
        return replace(self, **changes)


def partition_relays(M, K):
    """Relay indices ``0 .. M K - 1`` split into ``M`` consecutive subgroups.

    Subgroup ``x`` serves source and destination antenna ``x``.
    """
    if M < 1 or K < 1:
        raise ValueError("M and K must be >= 1")
    return tuple(tuple(range(x * K, (x + 1) * K)) for x in range(M))


# Moment identities ---------------------------------------------------------


class LemmaIdentity(enum.Enum):
    PRODUCT_FACTORIZATION = "product_factorization"
    NOISE_FACTORIZATION = "noise_factorization"
    SELF_PRODUCT = "self_product"
    ESTIMATE_PRODUCT = "estimate_product"
    INDEPENDENT_PRODUCT = "independent_product"


_BARS = ("self", "estimate", "independent")


@dataclass(frozen=True)
class LemmaParams:
    """Variances for the moment identities.

    ``h`` and ``g`` are channel powers, ``h_est`` and ``g_est`` the powers of
    their estimates (used when the bar is ``"estimate"``), ``h_prime`` and
    ``g_prime`` the powers of independent copies (bar ``"independent"``).
    ``T_d`` is the length of the data and noise blocks.
    """

    h: float = 1.0
    g: float = 1.0
    h_est: float = 1.0
    g_est: float = 1.0
    h_prime: float = 1.0
    g_prime: float = 1.0
    s: float = 1.0
    n: float = 1.0
    T_d: int = 1
    h_bar: str = "self"
    g_bar: str = "self"

    def __post_init__(self):
        for name in ("h", "g", "h_est", "g_est", "h_prime", "g_prime", "s", "n"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.h_est > self.h or self.g_est > self.g:
            raise ValueError("estimate power exceeds channel power")
        if self.h_bar not in _BARS or self.g_bar not in _BARS:
            raise ValueError(f"bars must be one of {_BARS}")
        if self.T_d < 1:
            raise ValueError("T_d must be >= 1")


def _pair_power(N, total, est, prime, bar):
    if bar == "self":
        return N * (N + 1) * total**2
    if bar == "estimate":
        return N * est * (N * est + total)
    return N * total * prime


def lemma1_analytic(identity, N, params=LemmaParams()):
    """Closed-form power of the product named by ``identity``.

    ``SELF_PRODUCT``, ``ESTIMATE_PRODUCT`` and ``INDEPENDENT_PRODUCT`` refer to
    the backward vector ``h``; the two factorizations use ``params.h_bar``
    and ``params.g_bar``.
    """
    identity = LemmaIdentity(identity)
    p = params
    if N < 1:
        raise ValueError("N must be >= 1")
    if identity is LemmaIdentity.SELF_PRODUCT:
        return _pair_power(N, p.h, p.h_est, p.h_prime, "self")
    if identity is LemmaIdentity.ESTIMATE_PRODUCT:
        return _pair_power(N, p.h, p.h_est, p.h_prime, "estimate")
    if identity is LemmaIdentity.INDEPENDENT_PRODUCT:
        return _pair_power(N, p.h, p.h_est, p.h_prime, "independent")
    gg = _pair_power(N, p.g, p.g_est, p.g_prime, p.g_bar)
    if identity is LemmaIdentity.PRODUCT_FACTORIZATION:
        return p.T_d * p.s * _pair_power(N, p.h, p.h_est, p.h_prime, p.h_bar) * gg
    return p.T_d * N * p.n * p.h * gg


def lemma1_mc(identity, N, params, plan, workers=1):
    """Monte Carlo power of the product named by ``identity``.

    Every trial draws fresh vectors and records the squared norm of the
    product, so the mean estimates ``var{.}`` in the power sense.
    """
    identity = LemmaIdentity(identity)
    p = params
    T = p.T_d
    h_bar = {
        LemmaIdentity.SELF_PRODUCT: "self",
        LemmaIdentity.ESTIMATE_PRODUCT: "estimate",
        LemmaIdentity.INDEPENDENT_PRODUCT: "independent",
    }.get(identity, p.h_bar)

    factorized = identity in (
        LemmaIdentity.PRODUCT_FACTORIZATION,
        LemmaIdentity.NOISE_FACTORIZATION,
    )
    noise_only_h = identity is LemmaIdentity.NOISE_FACTORIZATION
    # Each vector only draws the N-blocks it uses, in a fixed layout.
    layout = {}
    dims = 0

    def reserve(name, width):
        nonlocal dims
        layout[name] = (dims, dims + width)
        dims += width

    reserve("h", N if h_bar == "self" or noise_only_h else 2 * N)
    if factorized:
        reserve("g", N if p.g_bar == "self" else 2 * N)
        if identity is LemmaIdentity.PRODUCT_FACTORIZATION:
            reserve("s", T)
        else:
            reserve("noise", T * N)

    def block(z, name):
        a, b = layout[name]
        return z[:, a:b]

    def pair(z, total, est, prime, bar):
        # z holds one N-block, or two when the bar is not the vector itself.
        if bar == "estimate":
            x_hat = math.sqrt(est) * z[:, :N]
            return x_hat + math.sqrt(total - est) * z[:, N:], x_hat
        x = math.sqrt(total) * z[:, :N]
        if bar == "self":
            return x, x
        return x, math.sqrt(prime) * z[:, N:]

    def sample(z):
        n = z.shape[0]
        if noise_only_h:
            h = math.sqrt(p.h) * block(z, "h")
            hb = h
        else:
            h, hb = pair(block(z, "h"), p.h, p.h_est, p.h_prime, h_bar)
        hh = rowsum(h * hb.conj())
        if not factorized:
            return np.abs(hh) ** 2
        g, gb = pair(block(z, "g"), p.g, p.g_est, p.g_prime, p.g_bar)
        gg = rowsum(g.conj() * gb)
        if identity is LemmaIdentity.PRODUCT_FACTORIZATION:
            s = math.sqrt(p.s) * block(z, "s")
            return rowsum(np.abs(s) ** 2) * np.abs(hh * gg) ** 2
        noise = math.sqrt(p.n) * block(z, "noise").reshape(n, T, N)
        nh = rowsum(noise * h.conj()[:, None, :])
        return rowsum(np.abs(nh) ** 2) * np.abs(gg) ** 2

    return run_trials(sample, plan, dims, workers).moment(0)


# Normalizations -----------------------------------------------------------


def _u_power(cfg, x, perfect=False):
    """``E|u|^2`` after the backward matched filter at a relay of subgroup ``x``."""
    own = cfg.backward[x][x]
    est = own.total if perfect else own.est
    received = (cfg.N * est + own.total) * cfg.sigma_s_sq[x]
    for y in range(cfg.M):
        if y != x:
            received += cfg.backward[x][y].total * cfg.sigma_s_sq[y]
    return (cfg.rho_s * received + cfg.sigma_n_sq[x]) * cfg.N * est


def _amplitudes(cfg, perfect=False):
    """Per-subgroup gain on ``s`` for the composite path through one relay."""
    out = []
    for x in range(cfg.M):
        fwd = cfg.forward[x][x]
        g_est = fwd.total if perfect else fwd.est
        c2 = _u_power(cfg, x, perfect) * g_est
        if c2 == 0:
            raise DegenerateEstimation(
                f"relay normalization of subgroup {x} vanishes",
                vanished=tuple(
                    name
                    for name, v in (
                        (f"backward[{x}][{x}].est", cfg.backward[x][x].est),
                        (f"forward[{x}][{x}].est", fwd.est),
                    )
                    if v == 0
                ),
            )
        out.append(math.sqrt(cfg.rho_R * cfg.rho_s / (cfg.N * c2)))
    return out


def feedforward_power(cfg, antenna=0):
    """``var{A g}`` for the CSI fed forward by a relay of subgroup ``antenna``.

    ``A = h_hat h_hat^H conj(g_hat)`` is sent over ``g``; the power factorizes
    into ``var{h_hat h_hat^H} var{g_hat^H g}``.
    """
    N, i = cfg.N, antenna
    h, g = cfg.backward[i][i], cfg.forward[i][i]
    return N * (N + 1) * h.est**2 * N * g.est * (N * g.est + g.total)


def _zf_amplitude(cfg, antenna, alpha):
    if cfg.sigma_zf_sq == 0:
        return 0.0
    power = feedforward_power(cfg, antenna)
    if power == 0:
        raise DegenerateEstimation("feedforward signal power vanishes")
    rho_prime = cfg.rho_Rf / power
    return alpha * math.sqrt(cfg.N / rho_prime * cfg.sigma_zf_sq)


# Analytic S2 eSNR ----------------------------------------------------------


def s2_terms(cfg, antenna=0, exact=False):
    """Numerator and denominator terms of the analytic S2 effective SNR.

    All terms share the scale ``1 / (rho_R K)`` of the received powers.  The
    representative interfering antenna is ``j = antenna + 1 (mod M)`` and
    ``m = antenna + 2 (mod M)``.

    By default the terms follow the reference closed form, whose
    ``D3`` and ``D4`` carry the data power of antenna ``j`` and which omits
    destination and feedforward noise.  ``exact=True`` gives the exact
    ensemble powers of the received signal: relay noise powers in ``D3`` and
    ``D4``, plus ``Zf`` (feedforward noise, present in numerator and
    denominator) and ``Z`` (destination noise).

    Returns
    -------
    dict of str to float
        Keys ``N1, D1, D2, D3, D4, A, B, Zf, Z``.
    """
    M, N, K = cfg.M, cfg.N, cfg.K
    i = antenna
    j = (i + 1) % M
    m = (i + 2) % M
    rs = cfg.rho_s
    ss = cfg.sigma_s_sq
    hi, gi = cfg.backward[i][i], cfg.forward[i][i]
    hj = cfg.backward[j][j]
    h_ij = cfg.backward[i][j].total
    h_ji = cfg.backward[j][i].total
    h_jm = cfg.backward[j][m].total
    g_ji = cfg.forward[j][i].total
    A = rs * ((N * hi.est + hi.total) * ss[i] + (M - 1) * h_ij * ss[j]) + cfg.sigma_n_sq[i]
    B = (
        rs * (h_ji * ss[i] + (N * hj.est + hj.total) * ss[j] + (M - 2) * cfg.backward[j][m].total * ss[m])
        + cfg.sigma_n_sq[j]
    )
    if A == 0 or B == 0:
        raise DegenerateEstimation("relay received power vanishes", vanished=("A",) if A == 0 else ("B",))
    gsum = N * gi.est + gi.total
    N1 = rs * ((N + 1) * hi.est * gsum + (K - 1) * N**2 * hi.est * gi.est) * ss[i] / A
    D1 = rs * (hi.err * gsum * ss[i] + (M - 1) * h_ij * gsum * ss[j]) / A
    D2 = rs * (M - 1) * ((N * hj.est + hj.total) * ss[j] + (M - 2) * h_jm * ss[m] + h_ji * ss[i]) * g_ji / B
    if not exact:
        D3 = gsum * ss[j] / A
        D4 = (M - 1) * g_ji * ss[j] / B
        Zf = Z = 0.0
    else:
        D3 = gsum * cfg.sigma_n_sq[i] / A
        D4 = (M - 1) * g_ji * cfg.sigma_n_sq[j] / B
        alpha = _amplitudes(cfg)[i]
        Zf = _zf_amplitude(cfg, i, alpha) ** 2 / (cfg.rho_R * K)
        Z = cfg.sigma_z_sq[i] / (cfg.rho_R * K)
    return dict(N1=N1, D1=D1, D2=D2, D3=D3, D4=D4, A=A, B=B, Zf=Zf, Z=Z)


def esnr_s2_analytic(cfg, antenna=0, exact=False):
    """Analytic S2 effective SNR ``(N1 + Zf) / (D1 + D2 + D3 + D4 + Zf + Z)``.

    ``Zf`` and ``Z`` are zero in the reference form; see :func:`s2_terms`.

    Raises
    ------
    DegenerateEstimation
        On a zero denominator.
    """
    t = s2_terms(cfg, antenna, exact)
    den = t["D1"] + t["D2"] + t["D3"] + t["D4"] + t["Zf"] + t["Z"]
    if den == 0:
        raise DegenerateEstimation("S2 denominator vanishes", vanished=("D1", "D2", "D3", "D4"))
    return EsnrEstimate((t["N1"] + t["Zf"]) / den, Method.ANALYTIC)


# Simulation -----------------------------------------------------------------

# Blocks of N draws per relay.
_H_HAT, _H_ERR, _G_HAT, _G_ERR, _NOISE, _G_TO_I = range(6)
_FIXED_BLOCKS = 6


def _dims(cfg, extra=0):
    return cfg.M * cfg.K * (cfg.M + _FIXED_BLOCKS - 1) * cfg.N + 2 + extra


def _build_sample(cfg, antenna, schemes, with_symbols=False):
    """Per-trial evaluator shared by the simulators.

    The returned function maps standard draws to a dict of per-trial arrays.
    For scheme ``S`` it provides ``(S, y)`` coefficients of every source
    stream ``y`` at destination ``antenna``, ``(S, "noise")`` for relay plus
    destination noise and, for S2, ``sig_prime`` and ``int_prime``.
    """
    M, N, K = cfg.M, cfg.N, cfg.K
    i = antenna
    if not 0 <= i < M:
        raise ValueError(f"antenna must be in 0..{M - 1}")
    blocks = M + _FIXED_BLOCKS - 1
    amps = {}
    if Scheme.S1a in schemes:
        amps[Scheme.S1a] = _amplitudes(cfg, perfect=True)
    if Scheme.S1b in schemes or Scheme.S2 in schemes:
        est = _amplitudes(cfg)
        amps[Scheme.S1b] = amps[Scheme.S2] = est
    zf_amp = _zf_amplitude(cfg, i, amps[Scheme.S2][i]) if Scheme.S2 in schemes else 0.0
    sd = {
        x: dict(
            h_hat=math.sqrt(cfg.backward[x][x].est),
            h_err=math.sqrt(cfg.backward[x][x].err),
            g_hat=math.sqrt(cfg.forward[x][x].est),
            g_err=math.sqrt(cfg.forward[x][x].err),
            noise=math.sqrt(cfg.sigma_n_sq[x]),
            g_to_i=math.sqrt(cfg.forward[x][i].total),
            cross={y: math.sqrt(cfg.backward[x][y].total) for y in range(M) if y != x},
        )
        for x in range(M)
    }
    base = M * K * blocks * N
    z_amp = math.sqrt(cfg.sigma_z_sq[i])
    rho_s = cfg.rho_s

    def evaluate(z):
        n = z.shape[0]
        relays = z[:, :base].reshape(n, M, K, blocks, N)
        out = {}
        groups = []
        for x in range(M):
            r, a = relays[:, x], sd[x]
            h_hat = a["h_hat"] * r[:, :, _H_HAT]
            h_err = a["h_err"] * r[:, :, _H_ERR]
            g_hat = a["g_hat"] * r[:, :, _G_HAT]
            g_err = a["g_err"] * r[:, :, _G_ERR]
            backward = {x: h_hat + h_err}
            for slot, y in enumerate(sorted(a["cross"])):
                backward[y] = a["cross"][y] * r[:, :, _FIXED_BLOCKS + slot]
            g_own = g_hat + g_err
            g_i = g_own if x == i else a["g_to_i"] * r[:, :, _G_TO_I]
            groups.append(
                dict(h_hat=h_hat, h_err=h_err, g_hat=g_hat, g_i=g_i, g_own=g_own,
                     backward=backward, noise=a["noise"] * r[:, :, _NOISE])
            )
        dest_noise = z_amp * z[:, base]
        for scheme in schemes:
            alpha = amps[scheme]
            coeff = {y: 0.0 for y in range(M)}
            noise = dest_noise
            for x, gx in enumerate(groups):
                if scheme is Scheme.S1a:
                    fh, fg = gx["backward"][x], gx["g_own"]
                else:
                    fh, fg = gx["h_hat"], gx["g_hat"]
                fh_c = fh.conj()
                fwd = rowsum(fg.conj() * gx["g_i"])
                for y in range(M):
                    coeff[y] = coeff[y] + alpha[x] * rowsum(rowsum(gx["backward"][y] * fh_c) * fwd)
                noise = noise + alpha[x] / math.sqrt(rho_s) * rowsum(rowsum(gx["noise"] * fh_c) * fwd)
            for y in range(M):
                out[(scheme, y)] = coeff[y]
            out[(scheme, "noise")] = noise
            if scheme is Scheme.S2:
                gi = groups[i]
                fh_c = gi["h_hat"].conj()
                fwd = rowsum(gi["g_hat"].conj() * gi["g_i"])
                zf = zf_amp * z[:, base + 1]
                own_hat = alpha[i] * rowsum(rowsum(gi["h_hat"] * fh_c) * fwd)
                own_err = alpha[i] * rowsum(rowsum(gi["h_err"] * fh_c) * fwd)
                leak = 0.0
                for x, gx in enumerate(groups):
                    if x != i:
                        f = rowsum(gx["g_hat"].conj() * gx["g_i"])
                        leak = leak + alpha[x] * rowsum(rowsum(gx["backward"][i] * gx["h_hat"].conj()) * f)
                out["sig_prime"] = own_hat + zf
                out["int_prime"] = own_err - zf + leak
                out["decomp_scale"] = np.abs(own_hat) + np.abs(own_err) + np.abs(leak) + 2 * np.abs(zf)
        return out

    return evaluate


def _check_decomposition(values):
    h_sig = values[(Scheme.S2, "sig")]
    resid = np.abs(h_sig - (values["sig_prime"] + values["int_prime"]))
    scale = values["decomp_scale"]
    bad = resid > DECOMPOSITION_TOLERANCE * scale
    if np.any(bad):
        worst = float(np.max(resid[bad] / scale[bad]))
        raise NumericalError(f"effective CSI decomposition violated, relative residual {worst:.3e}")
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, resid / scale, 0.0)
    return rel


def _scheme_columns(cfg, antenna, values, scheme):
    ss = cfg.sigma_s_sq
    i = antenna
    interference = 0.0
    for y in range(cfg.M):
        if y != i:
            interference = interference + ss[y] * np.abs(values[(scheme, y)]) ** 2
    noise = np.abs(values[(scheme, "noise")]) ** 2
    if scheme is Scheme.S2:
        num = ss[i] * np.abs(values["sig_prime"]) ** 2
        den = ss[i] * np.abs(values["int_prime"]) ** 2 + interference + noise
    else:
        num = ss[i] * np.abs(values[(scheme, i)]) ** 2
        den = interference + noise
    return num, den


def simulate_mimo_all(cfg, plan, schemes=tuple(Scheme), antenna=0, workers=1):
    """Monte Carlo effective SNRs of several schemes on shared draws.

    Each trial draws every channel, estimate and noise of the network once,
    and each scheme applies its own relay filters and normalization.  The
    data symbols are averaged analytically, so the recorded powers are
    conditional expectations given the channels.  For S2 every trial also
    checks ``h_sig == h_sig' + h_int'`` to :data:`DECOMPOSITION_TOLERANCE`
    relative to the sum of the term magnitudes.

    Returns
    -------
    dict of Scheme to EsnrEstimate

    Raises
    ------
    DegenerateEstimation
        If a normalization is undefined or a measured denominator is zero
        together with its numerator.
    NumericalError
        If the decomposition check fails.
    """
    schemes = tuple(Scheme.parse(s) for s in schemes)
    evaluate = _build_sample(cfg, antenna, schemes)

    def sample(z):
        values = evaluate(z)
        cols = []
        for scheme in schemes:
            if scheme is Scheme.S2:
                values[(Scheme.S2, "sig")] = values[(Scheme.S2, antenna)]
                _check_decomposition(values)
            num, den = _scheme_columns(cfg, antenna, values, scheme)
            cols.extend([num, den])
        return np.stack(cols, axis=1)

    sums = run_trials(sample, plan, _dims(cfg), workers)
    out = {}
    for k, scheme in enumerate(schemes):
        value, ci = sums.ratio(2 * k, 2 * k + 1)
        out[scheme] = EsnrEstimate(value, Method.MONTE_CARLO, ci, plan.trials)
    return out


def simulate_mimo(scheme, cfg, plan, antenna=0, workers=1):
    """Monte Carlo effective SNR of one scheme; see :func:`simulate_mimo_all`."""
    scheme = Scheme.parse(scheme)
    return simulate_mimo_all(cfg, plan, (scheme,), antenna, workers)[scheme]


def decomposition_residual(cfg, plan, antenna=0):
    """Largest per-trial relative residual of ``h_sig - h_sig' - h_int'``."""
    evaluate = _build_sample(cfg, antenna, (Scheme.S2,))
    worst = 0.0
    for _, start, count in plan.chunks():
        values = evaluate(standard_draws(plan.master_seed, start, count, _dims(cfg)))
        values[(Scheme.S2, "sig")] = values[(Scheme.S2, antenna)]
        resid = np.abs(values[(Scheme.S2, "sig")] - values["sig_prime"] - values["int_prime"])
        scale = values["decomp_scale"]
        rel = np.where(scale > 0, resid / np.where(scale > 0, scale, 1.0), 0.0)
        worst = max(worst, float(rel.max()))
    return worst


def noise_uncorrelatedness(cfg, plan, antenna=0, workers=1):
    """Empirical ``E{conj(s^i) V^i}`` for S2, as real and imaginary parts.

    ``V^i`` collects everything except ``s^i h_sig'``.  Unlike the
    simulators this draws the data symbols explicitly.

    Returns
    -------
    tuple of MomentEstimate
        Real part and imaginary part.
    """
    M = cfg.M
    evaluate = _build_sample(cfg, antenna, (Scheme.S2,))
    base = _dims(cfg)

    def sample(z):
        values = evaluate(z[:, :base])
        s = z[:, base:] * np.sqrt(np.asarray(cfg.sigma_s_sq))[None, :]
        V = s[:, antenna] * values["int_prime"] + values[(Scheme.S2, "noise")]
        for y in range(M):
            if y != antenna:
                V = V + s[:, y] * values[(Scheme.S2, y)]
        c = s[:, antenna].conj() * V
        return np.stack([c.real, c.imag], axis=1)

    sums = run_trials(sample, plan, base + M, workers)
    return sums.moment(0), sums.moment(1)
