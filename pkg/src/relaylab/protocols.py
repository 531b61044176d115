"""Single-antenna amplify-and-forward relaying with three training protocols.

A source sends ``s`` to ``K`` single-antenna relays, each relay matched
filters with its estimated backward and forward channels and forwards to a
single-antenna destination.  The protocols differ in what channel knowledge
the destination acquires:

* ``P1`` learns every ``h_hat_k`` and ``g_hat_k`` separately.
* ``P2`` learns the compound estimates ``a_hat_k`` of ``a_k = h_k g_k``.
* ``P3`` receives ``A_k = |h_hat_k|^2 conj(g_hat_k)`` fed forward by the
  relays, through the true forward channel and a noisy link.

The closed forms in :func:`esnr_analytic` and the signal-level simulator in
:func:`simulate_destination` are independent routes to the same effective
SNR.  :func:`capacity_worst` evaluates the worst-case-noise lower bounds.
"""

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateEstimation
from .estimation import VarianceSplit
from .stats import rowsum, run_trials

__all__ = [
    "CAPACITY_PREFACTOR",
    "CapacityEstimate",
    "EsnrEstimate",
    "GRID",
    "Method",
    "Protocol",
    "SingleAntennaConfig",
    "capacity_sweep",
    "capacity_worst",
    "compound_split",
    "esnr_analytic",
    "esnr_grid_average",
    "esnr_slope",
    "feedforward_gain",
    "relay_gain",
    "simulate_destination",
    "training_duration",
]

# Half of each block carries data in the two-hop schedule.
CAPACITY_PREFACTOR = 0.5
GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


class Protocol(enum.Enum):
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown protocol {value!r}; expected P1, P2 or P3") from None


class Method(enum.Enum):
    ANALYTIC = "analytic"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class EsnrEstimate:
    """Effective SNR with provenance.

    ``value`` may be ``math.inf`` when a simulation measures exactly zero
    noise power.  Analytic estimates carry ``ci95_half_width == 0``.
    """

    value: float
    method: Method
    ci95_half_width: float = 0.0
    trials: int = 0

    def __post_init__(self):
        if self.method is Method.ANALYTIC and self.ci95_half_width != 0:
            raise ValueError("analytic estimates have no sampling error")

    def contains(self, value):
        if math.isinf(self.value):
            return math.isinf(value)
        return abs(self.value - value) <= self.ci95_half_width

    @property
    def interval(self):
        return (self.value - self.ci95_half_width, self.value + self.ci95_half_width)


@dataclass(frozen=True)
class CapacityEstimate:
    """Worst-case-noise capacity bound in bits per channel use."""

    bits_per_channel_use: float
    ci95_half_width: float
    trials: int
    prefactor: float = CAPACITY_PREFACTOR

    @property
    def interval(self):
        b, w = self.bits_per_channel_use, self.ci95_half_width
        return (b - w, b + w)


@dataclass(frozen=True)
class SingleAntennaConfig:
    """Scalars of the single-antenna relay network.

    Parameters
    ----------
    K : int
        Number of relays.
    rho_s, rho_R, rho_Rf : float
        Source power, relay data power and relay feedforward power.
    sigma_s_sq : float
        Data symbol power.
    sigma_n_sq : float
        Relay noise power, common to all relays.
    sigma_z_sq : float
        Destination noise power during data transmission.
    sigma_zf_sq : float
        Destination noise power while the relays feed CSI forward.
    backward, forward : VarianceSplit
        Source-to-relay and relay-to-destination channel statistics.
    """

    K: int
    backward: VarianceSplit = field(default_factory=VarianceSplit.perfect)
    forward: VarianceSplit = field(default_factory=VarianceSplit.perfect)
    rho_s: float = 1.0
    rho_R: float = 1.0
    rho_Rf: float = 1.0
    sigma_s_sq: float = 1.0
    sigma_n_sq: float = 1.0
    sigma_z_sq: float = 1.0
    sigma_zf_sq: float = 0.0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        object.__setattr__(self, "K", int(self.K))
        for name in ("rho_s", "rho_R", "rho_Rf", "sigma_s_sq"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("sigma_n_sq", "sigma_z_sq", "sigma_zf_sq"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("backward", "forward"):
            if not isinstance(getattr(self, name), VarianceSplit):
                raise TypeError(f"{name} must be a VarianceSplit")

    @classmethod
    def unit(cls, K, est_h, est_g, **kw):
        """Unit-power channels with the given estimate powers."""
        return cls(
            K=K,
            backward=VarianceSplit.from_estimate(est_h),
            forward=VarianceSplit.from_estimate(est_g),
            **kw,
        )

    def with_(self, **changes):
        return replace(self, **changes)


def _vanished(**terms):
    return tuple(name for name, v in terms.items() if v == 0)


def _named_variances(cfg):
    h, g = cfg.backward, cfg.forward
    return dict(
        sigma_h=h.total, sigma_h_est=h.est, sigma_h_err=h.err,
        sigma_g=g.total, sigma_g_est=g.est, sigma_g_err=g.err,
    )


def esnr_analytic(kind, cfg):
    """Closed-form effective SNR of a protocol.

    Relay and destination noise are neglected; all three forms grow
    linearly in ``K``.

    Raises
    ------
    DegenerateEstimation
        If the estimation-error terms in the denominator all vanish.
    """
    kind = Protocol.parse(kind)
    K = cfg.K
    sh, sht, s_h = cfg.backward.est, cfg.backward.err, cfg.backward.total
    sg, sgt, s_g = cfg.forward.est, cfg.forward.err, cfg.forward.total
    if kind is Protocol.P1:
        num = (K + 3) * sh * sg
        den = 2 * sh * sgt + sht * (s_g + sg)
    elif kind is Protocol.P2:
        num = (K + 1) * sh * sg
        den = sh * sgt + sht * s_g
    else:
        num = 2 * sh * (sg + s_g) + (K - 1) * sh * sg
        den = sht * (sg + s_g)
    if den == 0:
        v = _named_variances(cfg)
        raise DegenerateEstimation(
            f"{kind.value} closed form has a zero denominator",
            vanished=tuple(k for k, x in v.items() if x == 0),
        )
    return EsnrEstimate(num / den, Method.ANALYTIC)


def esnr_slope(kind, cfg):
    """Coefficient of ``K`` in :func:`esnr_analytic`, its large-K slope."""
    kind = Protocol.parse(kind)
    big = esnr_analytic(kind, replace(cfg, K=2)).value
    small = esnr_analytic(kind, replace(cfg, K=1)).value
    return big - small


def esnr_grid_average(kind, K, grid=GRID):
    """Mean closed-form eSNR over estimate powers ``grid x grid`` with unit totals."""
    total = 0.0
    for sh in grid:
        for sg in grid:
            total += esnr_analytic(kind, SingleAntennaConfig.unit(K, sh, sg)).value
    return total / len(grid) ** 2


def training_duration(kind, K):
    """Symbols spent before the destination holds its CSI.

    P1 trains every backward and forward channel, P2 every compound channel
    and P3 needs a broadcast, a forward training slot and one feedforward
    slot regardless of ``K``.
    """
    kind = Protocol.parse(kind)
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")
    K = int(K)
    return {Protocol.P1: 2 * K + 1, Protocol.P2: K + 1, Protocol.P3: 3}[kind]


def compound_split(backward, forward):
    """Statistics of ``a = h g`` and of its product estimate ``a_hat = h_hat g_hat``."""
    total = backward.total * forward.total
    est = backward.est * forward.est
    return VarianceSplit(total, est, total - est)


def relay_gain(cfg):
    """Ensemble amplitude normalization ``rho`` of each relay.

    Chosen so that the relay output ``t = r conj(h_hat g_hat)`` scaled by
    ``sqrt(rho / rho_s)`` has power ``rho_R``.
    """
    h, g = cfg.backward, cfg.forward
    power = (cfg.rho_s * (h.est + h.total) * cfg.sigma_s_sq + cfg.sigma_n_sq) * h.est * g.est
    if power == 0:
        raise DegenerateEstimation(
            "relay output power vanishes; normalization undefined",
            vanished=_vanished(sigma_h_est=h.est, sigma_g_est=g.est),
        )
    return cfg.rho_R * cfg.rho_s / power


def feedforward_gain(cfg):
    """``rho_Rf / var{A g}`` with ``A = |h_hat|^2 conj(g_hat)``.

    ``var{A g} = E|h_hat|^4 E{|g_hat|^2 |g|^2}`` factorizes into
    ``2 sh^2 * sg (sg + s_g)``.
    """
    sh, sg, s_g = cfg.backward.est, cfg.forward.est, cfg.forward.total
    power = 2 * sh**2 * sg * (sg + s_g)
    if power == 0:
        raise DegenerateEstimation(
            "feedforward signal power vanishes",
            vanished=_vanished(sigma_h_est=sh, sigma_g_est=sg),
        )
    return cfg.rho_Rf / power


# Layout of the standard draws consumed by the simulator, in blocks of K.
_H_HAT, _H_ERR, _G_HAT, _G_ERR, _NOISE, _A_HAT, _A_ERR = range(7)


def simulate_destination(
    kind, cfg, plan, include_overall_noise=False, compound="gaussian", workers=1
):
    """Monte Carlo effective SNR from the received destination signal.

    Every trial draws all channels, their estimates and the noises, applies
    the relay normalization and splits the destination signal into the
    part the destination can coherently use (``y_sig``) and the rest
    (``v``).  The data symbol is averaged out analytically, which leaves
    ``E|y_sig|^2 = rho sigma_s^2 E|c_sig|^2`` per trial.

    Parameters
    ----------
    kind : Protocol
    cfg : SingleAntennaConfig
    plan : McPlan
    include_overall_noise : bool
        Add relay noise and destination noise to ``v``.  Off by default so
        that the result is comparable with the noise-free closed forms.
    compound : {"gaussian", "product"}
        P2 only.  ``"gaussian"`` draws the compound estimate and error as
        independent complex Gaussians of powers ``sh sg`` and
        ``s_h s_g - sh sg``.  ``"product"`` uses ``a_hat = h_hat g_hat``
        literally, which coincides with the P1 signal split.
    workers : int

    Returns
    -------
    EsnrEstimate
        ``value`` is ``math.inf`` when the measured ``v`` power is exactly 0.

    Raises
    ------
    DegenerateEstimation
        If the relay normalization is undefined (``sh sg == 0``).
    """
    kind = Protocol.parse(kind)
    if compound not in ("gaussian", "product"):
        raise ValueError(f"compound must be 'gaussian' or 'product', got {compound!r}")
    K = cfg.K
    rho = relay_gain(cfg)
    amp_h, amp_ht = math.sqrt(cfg.backward.est), math.sqrt(cfg.backward.err)
    amp_g, amp_gt = math.sqrt(cfg.forward.est), math.sqrt(cfg.forward.err)
    amp_n = math.sqrt(cfg.sigma_n_sq)
    zf_scale = 0.0
    if kind is Protocol.P3 and cfg.sigma_zf_sq > 0:
        zf_scale = math.sqrt(cfg.sigma_zf_sq / feedforward_gain(cfg))
    gaussian_p2 = kind is Protocol.P2 and compound == "gaussian"
    a_split = compound_split(cfg.backward, cfg.forward)
    amp_a, amp_at = math.sqrt(a_split.est), math.sqrt(a_split.err)
    blocks = 7 if gaussian_p2 else 5
    dims = blocks * K + 2
    signal_power = rho * cfg.sigma_s_sq

    def sample(z):
        def block(b):
            return z[:, b * K : (b + 1) * K]

        h_hat, h_err = amp_h * block(_H_HAT), amp_ht * block(_H_ERR)
        g_hat, g_err = amp_g * block(_G_HAT), amp_gt * block(_G_ERR)
        h, g = h_hat + h_err, g_hat + g_err
        filt = h_hat.conj() * g_hat.conj()
        zf = zf_scale * z[:, -2]
        if kind is Protocol.P1 or (kind is Protocol.P2 and not gaussian_p2):
            c_sig = rowsum(np.abs(h_hat) ** 2 * np.abs(g_hat) ** 2)
            c_v = rowsum(np.abs(h_hat) ** 2 * g_hat.conj() * g_err + h_err * filt * g)
        elif kind is Protocol.P2:
            a_hat, a_err = amp_a * block(_A_HAT), amp_at * block(_A_ERR)
            c_sig = rowsum(np.abs(a_hat) ** 2)
            c_v = rowsum(a_err * a_hat.conj())
        else:
            c_sig = rowsum(np.abs(h_hat) ** 2 * g_hat.conj() * g) + zf
            c_v = rowsum(h_err * filt * g) - zf
        out = np.empty((z.shape[0], 2))
        out[:, 0] = signal_power * np.abs(c_sig) ** 2
        out[:, 1] = signal_power * np.abs(c_v) ** 2
        if include_overall_noise:
            relay = amp_n * block(_NOISE)
            w = math.sqrt(rho / cfg.rho_s) * rowsum(relay * filt * g)
            w = w + math.sqrt(cfg.sigma_z_sq) * z[:, -1]
            out[:, 1] += np.abs(w) ** 2
        return out

    sums = run_trials(sample, plan, dims, workers)
    value, ci = sums.ratio(0, 1)
    return EsnrEstimate(value, Method.MONTE_CARLO, ci, plan.trials)


def _capacity_columns(kind, cfg, sigma_n_values):
    kind = Protocol.parse(kind)
    K = cfg.K
    sh, sht, s_h = cfg.backward.est, cfg.backward.err, cfg.backward.total
    sg, sgt, s_g = cfg.forward.est, cfg.forward.err, cfg.forward.total
    B = K * sh * sg
    denominators = []
    for sn in sigma_n_values:
        C = (sht + sn) * (sg + s_g)
        if kind is Protocol.P1:
            d = B * (C + 2 * sh * sgt)
        elif kind is Protocol.P2:
            d = B * (sh * sgt + sht * s_g + (sg + s_g) * sn)
        else:
            d = B * C
        denominators.append(d)
    amp_h, amp_g, amp_gt = math.sqrt(sh), math.sqrt(sg), math.sqrt(sgt)

    def sample(z):
        h_hat = amp_h * z[:, :K]
        g_hat = amp_g * z[:, K : 2 * K]
        g_err = amp_gt * z[:, 2 * K :]
        hh = np.abs(h_hat) ** 2
        A = rowsum(hh * np.abs(g_hat) ** 2)
        num = A**2
        if kind is Protocol.P3:
            num = num + np.abs(rowsum(hh * g_hat.conj() * g_err)) ** 2
        out = np.empty((z.shape[0], len(denominators)))
        for j, d in enumerate(denominators):
            out[:, j] = CAPACITY_PREFACTOR * np.log2(1.0 + num / d)
        return out

    return sample, denominators, 3 * K


def capacity_sweep(kind, cfg, plan, sigma_n_values, workers=1):
    """:func:`capacity_worst` for several relay noise powers on shared draws.

    Returns a list of :class:`CapacityEstimate`, one per entry of
    ``sigma_n_values``.  Each entry equals the corresponding single call of
    :func:`capacity_worst` exactly.
    """
    values = [float(v) for v in sigma_n_values]
    if any(v < 0 for v in values):
        raise ValueError("sigma_n_sq values must be >= 0")
    if cfg.backward.est == 0 or cfg.forward.est == 0:
        # A = 0 surely, so every mutual information term is log2(1) = 0.
        return [CapacityEstimate(0.0, 0.0, plan.trials) for _ in values]
    sample, denominators, dims = _capacity_columns(kind, cfg, values)
    for v, d in zip(values, denominators):
        if d == 0:
            raise DegenerateEstimation(
                f"capacity bound diverges at sigma_n_sq={v}",
                vanished=_vanished(
                    sigma_n_sq=v, sigma_h_err=cfg.backward.err, sigma_g_err=cfg.forward.err
                ),
            )
    sums = run_trials(sample, plan, dims, workers)
    out = []
    for j in range(len(values)):
        m = sums.moment(j)
        out.append(CapacityEstimate(m.mean, m.ci95_half_width, plan.trials))
    return out


def capacity_worst(kind, cfg, plan, workers=1):
    """Worst-case-noise capacity lower bound ``1/2 E{I}`` at ``cfg.sigma_n_sq``.

    With ``A = sum |h_hat|^2 |g_hat|^2``, ``B = K sh sg`` and
    ``C = (sht + sn)(sg + s_g)`` the per-realization terms are

    * P1: ``log2(1 + A^2 / (B (C + 2 sh sgt)))``
    * P2: ``log2(1 + A^2 / (B C'))`` with
      ``C' = sh sgt + sht s_g + (sg + s_g) sn``
    * P3: ``log2(1 + (A^2 + |sum |h_hat|^2 conj(g_hat) g_err|^2) / (B C))``

    Returns exactly 0 when either estimate power is 0.

    Raises
    ------
    DegenerateEstimation
        If the denominator vanishes while ``A`` does not.
    """
    return capacity_sweep(kind, cfg, plan, [cfg.sigma_n_sq], workers)[0]

