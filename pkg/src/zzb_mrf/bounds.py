"""Ziv-Zakai and Cramer-Rao bounds for scalar relaxation-time estimation.

Under white Gaussian noise with variance ``sigma2`` and a uniform prior on
``[range_min, range_max]`` the bound reduces to

    ZZB = (1/delta) * int_0^delta xi * int_{min}^{max - xi} Q(||m(phi) - m(phi + xi)|| / (2 sigma)) dphi dxi

which :func:`zzb` evaluates with the trapezoid rule on a uniform grid, reusing
one fingerprint per grid node.  The Monte-Carlo functions realize the
underlying detection and estimation problems directly and serve as oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy.special import erfc

from ._parallel import pmap
from .epg_sim import EpgConfig, Schedule, Tissue, signal_derivative, simulate_fingerprints
from .errors import NonIdentifiableError, PreconditionError

Varying = Literal["T1", "T2"]


@dataclass(frozen=True)
class TissueSpec:
    """One scalar unknown with a uniform prior; the other relaxation time is fixed."""

    varying: Varying
    range_min: float
    range_max: float
    fixed_other: float
    weight: float = 1.0

    def __post_init__(self):
        if self.varying not in ("T1", "T2"):
            raise PreconditionError(f"varying must be 'T1' or 'T2', got {self.varying!r}")
        if not 0 < self.range_min < self.range_max:
            raise PreconditionError(f"need 0 < range_min < range_max, got [{self.range_min}, {self.range_max}]")
        if not self.fixed_other > 0:
            raise PreconditionError("fixed_other must be positive")
        if not self.weight >= 0:
            raise PreconditionError("weight must be nonnegative")

    @property
    def delta(self) -> float:
        return self.range_max - self.range_min

    @property
    def center(self) -> Tissue:
        mid = 0.5 * (self.range_min + self.range_max)
        return self.tissue_at(mid)

    def tissue_at(self, theta: float) -> Tissue:
        if self.varying == "T1":
            return Tissue(theta, self.fixed_other)
        return Tissue(self.fixed_other, theta)

    def grid(self, n: int) -> np.ndarray:
        return np.linspace(self.range_min, self.range_max, n)

    def relaxation_pairs(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """(t1, t2) arrays for parameter values ``theta``."""
        theta = np.asarray(theta, dtype=float)
        other = np.full_like(theta, self.fixed_other)
        return (theta, other) if self.varying == "T1" else (other, theta)


@dataclass(frozen=True)
class NoiseModel:
    sigma2: float

    def __post_init__(self):
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise PreconditionError(f"sigma2 must be positive and finite, got {self.sigma2}")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))

    @classmethod
    def from_snr(cls, fingerprints, snr: float) -> "NoiseModel":
        """Noise whose standard deviation is the peak |m| divided by ``snr``."""
        peak = float(np.max(np.abs(fingerprints)))
        if peak == 0 or snr <= 0:
            raise PreconditionError("need a nonzero signal and positive SNR")
        return cls((peak / snr) ** 2)


@dataclass(frozen=True)
class QuadratureConfig:
    n_grid: int = 64

    def __post_init__(self):
        if self.n_grid < 16:
            raise PreconditionError(f"n_grid must be >= 16, got {self.n_grid}")


def q_function(x):
    """Standard normal tail probability, 1 - Phi(x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def _diff(m_a, m_b):
    m_a = np.asarray(m_a, dtype=float)
    m_b = np.asarray(m_b, dtype=float)
    if m_a.shape != m_b.shape:
        raise PreconditionError(f"fingerprint lengths differ: {m_a.shape} vs {m_b.shape}")
    return m_a - m_b


def llr_mean(m_a, m_b, noise: NoiseModel) -> float:
    """Mean of the log-likelihood ratio under the first hypothesis.

    The variance is twice this value for white noise.
    """
    d = _diff(m_a, m_b)
    return float(d @ d) / (2.0 * noise.sigma2)


def pmin(m_a, m_b, noise: NoiseModel) -> float:
    """Minimum (MAP, equal priors) error probability of deciding between two fingerprints."""
    return float(q_function(np.sqrt(llr_mean(m_a, m_b, noise) / 2.0)))


def pairwise_sq_distances(m: np.ndarray) -> np.ndarray:
    """Squared distances between rows, batched over leading dims.  Shape (..., n, n)."""
    sq = np.einsum("...ij,...ij->...i", m, m)
    gram = m @ np.swapaxes(m, -1, -2)
    d2 = sq[..., :, None] + sq[..., None, :] - 2.0 * gram
    return np.maximum(d2, 0.0)


@lru_cache(maxsize=32)
def _lag_layout(n: int):
    """Upper-triangle pairs (i, i + k) grouped by lag k = 1..n-2, with segment starts."""
    rows, cols, starts = [], [], []
    pos = 0
    for k in range(1, n - 1):
        i = np.arange(n - k)
        rows.append(i)
        cols.append(i + k)
        starts.append(pos)
        pos += n - k
    starts = np.array(starts)
    ends = np.append(starts[1:], pos) - 1
    return np.concatenate(rows), np.concatenate(cols), starts, ends


def zzb_from_fingerprints(fingerprints: np.ndarray, delta: float, sigma2) -> np.ndarray:
    """Trapezoidal double integral over a uniform grid of fingerprints.

    ``fingerprints`` has shape (..., n_grid, N) ordered by increasing theta;
    ``sigma2`` broadcasts against the leading dims.  Lag ``k`` of the outer
    integral pairs node ``i`` with node ``i + k``; the last lag spans a
    zero-length inner interval and contributes nothing.
    """
    n = fingerprints.shape[-2]
    h = delta / (n - 1)
    sigma2 = np.asarray(sigma2, dtype=float)[..., None, None]
    rows, cols, starts, ends = _lag_layout(n)
    d2 = pairwise_sq_distances(fingerprints)[..., rows, cols]
    q = q_function(np.sqrt(d2 / (4.0 * sigma2[..., 0])))
    sums = np.add.reduceat(q, starts, axis=-1)
    inner = h * (sums - 0.5 * (q[..., starts] + q[..., ends]))
    xi = h * np.arange(1, n - 1)
    # trapezoid over lags 0..n-1; both end terms vanish (xi = 0, empty inner range)
    return h * np.sum(xi * inner, axis=-1) / delta


def grid_fingerprints(schedule: Schedule, spec: TissueSpec, cfg: EpgConfig, n_grid: int) -> np.ndarray:
    t1, t2 = spec.relaxation_pairs(spec.grid(n_grid))
    return simulate_fingerprints(schedule, t1, t2, cfg)


def zzb(
    schedule: Schedule,
    spec: TissueSpec,
    noise: NoiseModel,
    cfg: EpgConfig = EpgConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
) -> float:
    """Ziv-Zakai lower bound on the MSE (ms^2) of any estimator of ``spec``'s parameter."""
    m = grid_fingerprints(schedule, spec, cfg, quad.n_grid)
    return float(zzb_from_fingerprints(m, spec.delta, noise.sigma2))


def crb(
    schedule: Schedule,
    tissue: Tissue,
    noise: NoiseModel,
    cfg: EpgConfig = EpgConfig(),
    target: Varying = "T2",
    rel_step: float = 1e-3,
) -> float:
    """Single-parameter Cramer-Rao bound sigma^2 / ||dm/dtheta||^2 (ms^2)."""
    dm = signal_derivative(schedule, tissue, cfg, target, rel_step)
    try:
        return crb_from_derivative(dm, noise)
    except NonIdentifiableError:
        raise NonIdentifiableError(f"{target} is not identifiable at {tissue}: zero signal derivative") from None


def crb_from_derivative(dm, noise: NoiseModel) -> float:
    info = float(np.dot(dm, dm))
    if info == 0.0:
        raise NonIdentifiableError("zero signal derivative")
    return noise.sigma2 / info


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    # counter-based: each fixed-size chunk of trials owns an independent stream
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chunk)]))


def monte_carlo_pmin(
    m_a, m_b, noise: NoiseModel, n_trials: int = 100_000, seed: int = 0, chunk: int = 10_000
) -> float:
    """Empirical error rate of the nearest-signal detector with equiprobable hypotheses."""
    if n_trials < 10_000:
        raise PreconditionError(f"n_trials must be >= 1e4, got {n_trials}")
    d = _diff(m_a, m_b)
    signals = np.stack([np.asarray(m_a, float), np.asarray(m_b, float)])
    threshold = float(signals[0] @ signals[0] - signals[1] @ signals[1])
    clean_proj = signals @ d
    sigma = noise.sigma

    def run(c):
        size = min(chunk, n_trials - c * chunk)
        rng = _chunk_rng(seed, c)
        truth = rng.integers(0, 2, size=size)
        z = rng.standard_normal((size, d.size))
        # ||s - m_b||^2 < ||s - m_a||^2  <=>  2 <s, m_a - m_b> < ||m_a||^2 - ||m_b||^2,
        # with s = m_truth + sigma z
        proj = clean_proj[truth] + sigma * (z @ d)
        decision = (2.0 * proj < threshold).astype(int)
        return int(np.count_nonzero(decision != truth))

    n_chunks = -(-n_trials // chunk)
    return sum(pmap(run, range(n_chunks))) / n_trials


@dataclass(frozen=True)
class MseEstimate:
    mse: float
    stderr: float
    n_trials: int

    def __float__(self):
        return self.mse


def monte_carlo_mse(
    schedule: Schedule,
    spec: TissueSpec,
    noise: NoiseModel,
    cfg: EpgConfig = EpgConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
    n_trials: int = 2000,
    seed: int = 0,
    chunk: int = 500,
) -> MseEstimate:
    """MSE of the grid maximum-likelihood estimator under the uniform prior.

    Theta is drawn uniformly over the spec range, the observation is
    ``m(theta) + z`` and the estimate is the grid node whose fingerprint is
    nearest in Euclidean distance.
    """
    if n_trials < 1000:
        raise PreconditionError(f"n_trials must be >= 1000, got {n_trials}")
    theta_grid = spec.grid(quad.n_grid)
    atoms = grid_fingerprints(schedule, spec, cfg, quad.n_grid)
    atom_sq = np.sum(atoms**2, axis=1)
    sigma = noise.sigma

    def run(c):
        size = min(chunk, n_trials - c * chunk)
        rng = _chunk_rng(seed, c)
        theta = rng.uniform(spec.range_min, spec.range_max, size=size)
        t1, t2 = spec.relaxation_pairs(theta)
        s = simulate_fingerprints(schedule, t1, t2, cfg)
        s = s + sigma * rng.standard_normal(s.shape)
        # argmin ||s - m_i||^2 == argmin (||m_i||^2 - 2 <s, m_i>)
        idx = np.argmin(atom_sq[None, :] - 2.0 * s @ atoms.T, axis=1)
        return (theta_grid[idx] - theta) ** 2

    n_chunks = -(-n_trials // chunk)
    err2 = np.concatenate(pmap(run, range(n_chunks)))
    return MseEstimate(float(err2.mean()), float(err2.std(ddof=1) / np.sqrt(err2.size)), int(err2.size))
