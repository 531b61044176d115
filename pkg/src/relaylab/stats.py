"""Seeded complex Gaussian sampling and deterministic Monte Carlo moments.

Every Monte Carlo estimate in the package goes through :func:`run_trials`.
Trial ``t`` always consumes the same slice of a counter-based Philox stream,
so the per-trial draws depend only on ``(master_seed, t)``.  Chunking and
worker count decide how trials are scheduled, never what they draw, and the
final sums are exactly rounded (``math.fsum``), which makes every estimate
bitwise independent of ``chunk_size`` and ``workers``.

All complex Gaussians follow the CN(0, s2) convention ``E{|x|^2} = s2`` with
independent real and imaginary parts of variance ``s2 / 2``.
"""

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEstimation

__all__ = [
    "McPlan",
    "MomentEstimate",
    "TrialSums",
    "Z95",
    "derive_seed",
    "derive_stream",
    "estimate_moment",
    "estimate_ratio",
    "rowsum",
    "run_trials",
    "sample_cgaussian",
    "standard_draws",
]

Z95 = 1.96
_SEED_MASK = (1 << 64) - 1
# Philox4x64 produces four doubles per counter increment.
_DOUBLES_PER_STEP = 4


@dataclass(frozen=True)
class McPlan:
    """Trial count, master seed and scheduling granularity of a Monte Carlo run.

    Parameters
    ----------
    trials : int
        Number of independent trials, at least one.
    master_seed : int
        Seed of the run; reduced modulo 2**64.
    chunk_size : int
        Trials per scheduled chunk.  Affects memory and parallelism only.
    """

    trials: int
    master_seed: int = 0
    chunk_size: int = 4096

    def __post_init__(self):
        if int(self.trials) < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if int(self.chunk_size) < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")
        object.__setattr__(self, "trials", int(self.trials))
        object.__setattr__(self, "chunk_size", int(self.chunk_size))
        object.__setattr__(self, "master_seed", int(self.master_seed) & _SEED_MASK)

    @property
    def n_chunks(self):
        return -(-self.trials // self.chunk_size)

    def chunks(self):
        """List of ``(chunk_index, first_trial, n_trials)`` in ascending order."""
        out = []
        for c in range(self.n_chunks):
            start = c * self.chunk_size
            out.append((c, start, min(self.chunk_size, self.trials - start)))
        return out

    def with_seed(self, master_seed):
        return McPlan(self.trials, master_seed, self.chunk_size)


@dataclass(frozen=True)
class MomentEstimate:
    """Sample mean with its variance and a normal-approximation 95% interval."""

    mean: float
    variance_of_mean: float
    trials: int
    ci95_half_width: float

    @classmethod
    def from_variance(cls, mean, variance_of_mean, trials):
        v = max(float(variance_of_mean), 0.0)
        return cls(float(mean), v, int(trials), Z95 * math.sqrt(v))

    def contains(self, value, k=1.0):
        """True if ``value`` lies within ``k`` half-widths of the mean."""
        return abs(self.mean - value) <= k * self.ci95_half_width

    @property
    def interval(self):
        return (self.mean - self.ci95_half_width, self.mean + self.ci95_half_width)


def derive_seed(master_seed, *labels):
    """Deterministic 64-bit seed for a named sub-experiment of ``master_seed``."""
    text = repr((int(master_seed) & _SEED_MASK,) + tuple(labels)).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little")


def derive_stream(master_seed, chunk_index):
    """Independent, reproducible random stream number ``chunk_index``.

    Streams are Philox generators keyed through ``SeedSequence`` spawn keys,
    so distinct indices (or seeds) give statistically independent streams.
    """
    if chunk_index < 0:
        raise ValueError("chunk_index must be >= 0")
    seq = np.random.SeedSequence(int(master_seed) & _SEED_MASK, spawn_key=(int(chunk_index),))
    return np.random.Generator(np.random.Philox(seq))


def _box_muller(u):
    # u[..., 0] in [0, 1) so 1 - u is in (0, 1] and the log stays finite.
    radius = np.sqrt(-np.log1p(-u[..., 0]))
    return radius * np.exp(2j * np.pi * u[..., 1])


def sample_cgaussian(variance, stream, size=None):
    """Draw CN(0, ``variance``) samples from ``stream``.

    Parameters
    ----------
    variance : float
        Total power ``E{|x|^2}``; must be non-negative.
    stream : numpy.random.Generator
        Source of uniforms.
    size : int or tuple of int, optional
        Output shape.  A Python complex is returned when omitted.

    Returns
    -------
    complex or numpy.ndarray
    """
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    shape = () if size is None else np.atleast_1d(size).tolist()
    u = stream.random(tuple(shape) + (2,))
    x = math.sqrt(variance) * _box_muller(u)
    if variance == 0:
        x = np.zeros_like(x)
    return complex(x) if size is None else x


def _width(dims):
    doubles = 2 * dims
    return -(-doubles // _DOUBLES_PER_STEP) * _DOUBLES_PER_STEP


def standard_draws(master_seed, first_trial, n_trials, dims):
    """CN(0, 1) draws of trials ``first_trial .. first_trial + n_trials - 1``.

    Returns an ``(n_trials, dims)`` complex array.  Row ``r`` depends only on
    ``(master_seed, first_trial + r, dims)``.
    """
    width = _width(dims)
    bitgen = np.random.Philox(np.random.SeedSequence(int(master_seed) & _SEED_MASK))
    bitgen.advance(first_trial * width // _DOUBLES_PER_STEP)
    u = np.random.Generator(bitgen).random((n_trials, width))
    return _box_muller(u[:, : 2 * dims].reshape(n_trials, dims, 2))


def rowsum(x):
    """Sum over the last axis in index order.

    numpy's pairwise reductions may associate differently depending on the
    array shape; an explicit left-to-right loop keeps per-trial results
    independent of how many trials are evaluated together.
    """
    x = np.asarray(x)
    acc = x[..., 0].copy()
    for i in range(1, x.shape[-1]):
        acc += x[..., i]
    return acc


class TrialSums:
    """Exactly rounded first and second sums of per-trial outputs.

    Second sums are computed on demand and cached, so wide outputs (one
    column per sweep point, say) only pay for the covariances they use.

    Attributes
    ----------
    n : int
        Number of trials.
    s1 : numpy.ndarray
        ``s1[i] = sum_t x_t[i]``.
    """

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self._values = values
        self.n = values.shape[0]
        self.s1 = np.array([math.fsum(values[:, i]) for i in range(values.shape[1])])
        self._s2 = {}

    def s2(self, i, j):
        """``sum_t x_t[i] * x_t[j]``, exactly rounded."""
        key = (min(i, j), max(i, j))
        if key not in self._s2:
            self._s2[key] = math.fsum(self._values[:, i] * self._values[:, j])
        return self._s2[key]

    @property
    def width(self):
        return len(self.s1)

    def _combo(self, cols):
        w = np.zeros(self.width)
        for c in np.atleast_1d(cols):
            w[c] += 1.0
        return w

    def mean(self, cols=0):
        return float(self._combo(cols) @ self.s1) / self.n

    def covariance(self, a=0, b=0):
        """Unbiased sample covariance of the column sums ``a`` and ``b``."""
        if self.n < 2:
            return 0.0
        wa, wb = self._combo(a), self._combo(b)
        ia, ib = np.flatnonzero(wa), np.flatnonzero(wb)
        sab = sum(wa[i] * wb[j] * self.s2(i, j) for i in ia for j in ib)
        return float(sab - (wa @ self.s1) * (wb @ self.s1) / self.n) / (self.n - 1)

    def moment(self, cols=0):
        """:class:`MomentEstimate` of the mean of the summed columns ``cols``."""
        var = max(self.covariance(cols, cols), 0.0)
        return MomentEstimate.from_variance(self.mean(cols), var / self.n, self.n)

    def ratio(self, num, den):
        """Ratio of means ``E{num} / E{den}`` with a delta-method 95% half-width.

        Returns ``(inf, 0.0)`` when the denominator sums to exactly zero.
        """
        ma, mb = self.mean(num), self.mean(den)
        if mb == 0.0:
            if ma == 0.0:
                raise DegenerateEstimation("numerator and denominator powers are both zero")
            return math.inf, 0.0
        r = ma / mb
        var = (
            self.covariance(num, num)
            - 2.0 * r * self.covariance(num, den)
            + r * r * self.covariance(den, den)
        ) / (self.n * mb * mb)
        return r, Z95 * math.sqrt(max(var, 0.0))


def run_trials(sample, plan, dims, workers=1):
    """Evaluate ``sample`` on every trial of ``plan`` and reduce exactly.

    Parameters
    ----------
    sample : callable
        ``sample(z)`` maps an ``(n, dims)`` array of CN(0, 1) draws to an
        ``(n,)`` or ``(n, q)`` array of real per-trial outputs.  It must act
        row by row: output row ``r`` may depend on ``z[r]`` only.
    plan : McPlan
    dims : int
        Complex standard draws consumed per trial.
    workers : int
        Threads used to evaluate chunks.

    Returns
    -------
    TrialSums
    """
    if dims < 1:
        raise ValueError("dims must be >= 1")

    def one_chunk(chunk):
        _, start, count = chunk
        out = np.asarray(sample(standard_draws(plan.master_seed, start, count, dims)), dtype=float)
        if out.shape[0] != count:
            raise ValueError(f"sample returned {out.shape[0]} rows for {count} trials")
        return out

    chunks = plan.chunks()
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one_chunk, chunks))
    else:
        parts = [one_chunk(c) for c in chunks]
    return TrialSums(np.concatenate(parts, axis=0))


def estimate_moment(sample, plan, dims=1, workers=1):
    """Monte Carlo mean of a scalar per-trial quantity as a :class:`MomentEstimate`."""
    return run_trials(sample, plan, dims, workers).moment(0)


def estimate_ratio(sample, plan, dims, num=0, den=1, workers=1):
    """Ratio of two Monte Carlo means, ``E{x[num]} / E{x[den]}``."""
    return run_trials(sample, plan, dims, workers).ratio(num, den)
