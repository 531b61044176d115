"""Block fading channels, the training-based MMSE estimator and variance splits.

An MMSE estimate is orthogonal to its error, so a channel of power ``total``
splits into an estimate of power ``est`` and an uncorrelated error of power
``err = total - est``.  The protocol formulas only ever see these three
numbers, which is why :class:`VarianceSplit` is the currency of the rest of
the package.  :func:`mmse_estimate` and :func:`training_statistics` exist to
show that such splits come out of actual training.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .stats import rowsum, run_trials, sample_cgaussian

__all__ = [
    "ChannelDraw",
    "TrainingConfig",
    "VarianceSplit",
    "default_training",
    "draw_split_channel",
    "mmse_estimate",
    "mmse_split",
    "training_statistics",
    "verify_orthogonality",
]

SOLVE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class VarianceSplit:
    """Powers of a channel, its estimate and the estimation error.

    ``total == est + err`` is enforced at construction to a relative
    tolerance of 1e-12.  Use :meth:`from_estimate` to build a split from the
    estimate power alone.
    """

    total: float
    est: float
    err: float

    def __post_init__(self):
        for name in ("total", "est", "err"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)
        if abs(self.total - (self.est + self.err)) > 1e-12 * max(self.total, 1.0):
            raise ValueError(
                f"split violates total = est + err: {self.total} != {self.est} + {self.err}"
            )

    @classmethod
    def from_estimate(cls, est, total=1.0):
        """Split with the given estimate power; the error takes the remainder."""
        if est > total:
            raise ValueError(f"estimate power {est} exceeds channel power {total}")
        return cls(total, est, total - est)

    @classmethod
    def perfect(cls, total=1.0):
        return cls(total, total, 0.0)


@dataclass(frozen=True)
class TrainingConfig:
    """Coherence block and training parameters.

    Parameters
    ----------
    T_tau : int
        Training symbols; at least ``M``.
    T_d : int
        Data symbols.
    rho_tau : float
        Training SNR.
    M : int
        Transmit antennas.
    N : int
        Receive antennas.
    """

    T_tau: int = 1
    T_d: int = 1
    rho_tau: float = 1.0
    M: int = 1
    N: int = 1

    def __post_init__(self):
        if min(self.T_tau, self.T_d, self.M, self.N) < 1:
            raise ValueError("T_tau, T_d, M and N must all be >= 1")
        if self.T_tau < self.M:
            raise ValueError(f"T_tau={self.T_tau} < M={self.M}: channel not identifiable")
        if not self.rho_tau > 0:
            raise ValueError(f"rho_tau must be > 0, got {self.rho_tau}")

    @property
    def T(self):
        return self.T_tau + self.T_d


@dataclass(frozen=True)
class ChannelDraw:
    """A channel realization together with its estimate and estimation error."""

    h_hat: np.ndarray
    h_tilde: np.ndarray
    h: np.ndarray


def mmse_estimate(y_tau, s_tau, cfg):
    """MMSE channel estimate from a received training block.

    Implements ``sqrt(M/rho) (M/rho I + S^H S)^{-1} S^H Y`` for the model
    ``Y = sqrt(rho/M) S H + V`` with unit-power channel and noise entries.

    Parameters
    ----------
    y_tau : array_like, shape (T_tau, N)
        Received training signal.
    s_tau : array_like, shape (T_tau, M)
        Transmitted training signal.
    cfg : TrainingConfig

    Returns
    -------
    numpy.ndarray, shape (M, N)

    Raises
    ------
    ValueError
        On inconsistent dimensions.
    NumericalError
        If the relative residual of the M x M solve exceeds 1e-10.
    """
    y = np.atleast_2d(np.asarray(y_tau, dtype=complex))
    s = np.atleast_2d(np.asarray(s_tau, dtype=complex))
    if s.shape != (cfg.T_tau, cfg.M):
        raise ValueError(f"s_tau has shape {s.shape}, expected {(cfg.T_tau, cfg.M)}")
    if y.shape != (cfg.T_tau, cfg.N):
        raise ValueError(f"y_tau has shape {y.shape}, expected {(cfg.T_tau, cfg.N)}")
    ratio = cfg.M / cfg.rho_tau
    gram = ratio * np.eye(cfg.M) + s.conj().T @ s
    rhs = s.conj().T @ y
    x = np.linalg.solve(gram, rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and np.linalg.norm(gram @ x - rhs) > SOLVE_TOLERANCE * scale:
        raise NumericalError("MMSE normal equations solved beyond tolerance")
    return math.sqrt(ratio) * x


def default_training(cfg):
    """Unit-modulus training block with orthogonal columns, ``S^H S = T_tau I``."""
    t = np.arange(cfg.T_tau)[:, None]
    m = np.arange(cfg.M)[None, :]
    return np.exp(-2j * np.pi * t * m / cfg.T_tau)


def mmse_split(cfg):
    """Estimate/error split produced by :func:`default_training`.

    With ``S^H S = T_tau I`` every entry sees an effective SNR
    ``g = rho T_tau / M`` and the estimate power is ``g / (1 + g)``.
    """
    g = cfg.rho_tau * cfg.T_tau / cfg.M
    return VarianceSplit.from_estimate(g / (1.0 + g))


def draw_split_channel(split, shape, stream):
    """Draw independent estimate and error with the powers of ``split``."""
    h_hat = sample_cgaussian(split.est, stream, shape)
    h_tilde = sample_cgaussian(split.err, stream, shape)
    return ChannelDraw(h_hat, h_tilde, h_hat + h_tilde)


def training_statistics(cfg, plan, s_tau=None, noiseless=False, workers=1):
    """End-to-end training Monte Carlo.

    Each trial draws ``H`` and ``V`` with unit-power entries, forms the
    received block, runs :func:`mmse_estimate` and records entry-averaged
    powers of the estimate and the error and their cross moment
    ``E{H_hat conj(H - H_hat)}``.

    Returns
    -------
    dict of str to MomentEstimate
        Keys ``est_power``, ``err_power``, ``cross_re``, ``cross_im``.
    """
    s = default_training(cfg) if s_tau is None else np.asarray(s_tau, dtype=complex)
    M, N, T = cfg.M, cfg.N, cfg.T_tau
    amp = math.sqrt(cfg.rho_tau / M)
    # The estimator is linear in Y, so precompute its matrix once.
    ratio = M / cfg.rho_tau
    gram = ratio * np.eye(M) + s.conj().T @ s
    est_op = math.sqrt(ratio) * np.linalg.solve(gram, s.conj().T)
    # Same operator as mmse_estimate; check on one block to keep them tied.
    probe = np.arange(T * N).reshape(T, N) + 1j
    if not np.allclose(est_op @ probe, mmse_estimate(probe, s, cfg), rtol=1e-12, atol=0):
        raise NumericalError("vectorized estimator disagrees with mmse_estimate")

    def sample(z):
        n = z.shape[0]
        H = z[:, : M * N].reshape(n, M, N)
        V = z[:, M * N :].reshape(n, T, N)
        Y = np.zeros_like(V) if noiseless else V.copy()
        for m in range(M):
            Y += amp * s[None, :, m, None] * H[:, None, m, :]
        H_hat = np.zeros_like(H)
        for t in range(T):
            H_hat += est_op[None, :, t, None] * Y[:, None, t, :]
        H_err = H - H_hat
        per = M * N
        out = np.empty((n, 4))
        out[:, 0] = rowsum((np.abs(H_hat) ** 2).reshape(n, per)) / per
        out[:, 1] = rowsum((np.abs(H_err) ** 2).reshape(n, per)) / per
        cross = rowsum((H_hat * H_err.conj()).reshape(n, per)) / per
        out[:, 2] = cross.real
        out[:, 3] = cross.imag
        return out

    sums = run_trials(sample, plan, dims=M * N + T * N, workers=workers)
    keys = ("est_power", "err_power", "cross_re", "cross_im")
    return {k: sums.moment(i) for i, k in enumerate(keys)}


def verify_orthogonality(cfg, plan, s_tau=None, workers=1):
    """Real part of the empirical ``E{H_hat conj(H_tilde)}`` after training.

    The imaginary part and both powers are available from
    :func:`training_statistics`.
    """
    return training_statistics(cfg, plan, s_tau=s_tau, workers=workers)["cross_re"]
