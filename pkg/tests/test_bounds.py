import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st
from scipy.integrate import simpson
from scipy.stats import norm

from zzb_mrf.bounds import (
    NoiseModel,
    QuadratureConfig,
    TissueSpec,
    crb,
    crb_from_derivative,
    grid_fingerprints,
    llr_mean,
    monte_carlo_mse,
    monte_carlo_pmin,
    pmin,
    q_function,
    zzb,
    zzb_from_fingerprints,
)
from zzb_mrf.config import REFERENCE_SPECS
from zzb_mrf.epg_sim import EpgConfig, Tissue, signal_derivative, simulate_fingerprints
from zzb_mrf.errors import NonIdentifiableError, PreconditionError
from zzb_mrf.seqopt import conventional_schedule

ROW1 = REFERENCE_SPECS[0]
ROW8 = REFERENCE_SPECS[7]
SCHED50 = conventional_schedule(50, seed=0)


def pair_at_separation(ratio, sigma=0.05, n=400, seed=0):
    """Two length-n vectors with ||a - b|| / (2 sigma) == ratio."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.5, 0.5, n)
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    return a, a + 2 * sigma * ratio * u, NoiseModel(sigma**2)


# q_function

def test_q_at_zero():
    assert q_function(0.0) == 0.5


def test_q_symmetry():
    assert q_function(0.7) + q_function(-0.7) == pytest.approx(1.0, abs=1e-15)


def test_q_against_mpmath_value():
    # 40-digit mpmath erfc: Q(1.2815515655) = 0.10000000000782731
    assert q_function(1.2815515655) == pytest.approx(0.1000000000078273, abs=1e-15)
    assert abs(q_function(1.2815515655) - 0.1) < 1e-9


@given(st.floats(-30, 30))
def test_q_identities(x):
    q = q_function(x)
    assert 0.0 <= q <= 1.0
    assert q + q_function(-x) == pytest.approx(1.0, abs=1e-15)
    assert q == pytest.approx(norm.sf(x), rel=1e-12, abs=1e-300)


# LLR / Pmin

def test_llr_mean_identical():
    a = np.linspace(0, 1, 10)
    assert llr_mean(a, a, NoiseModel(1.0)) == 0.0


def test_llr_mean_substitution():
    a = np.zeros(4)
    b = np.full(4, np.sqrt(2.0))  # ||diff||^2 = 8
    assert llr_mean(a, b, NoiseModel(2.0)) == pytest.approx(2.0, rel=1e-15)


def test_llr_mean_against_elementwise_sum():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal(400), rng.standard_normal(400)
    oracle = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        oracle += (x - y) ** 2
    oracle /= 2 * 0.3
    assert llr_mean(a, b, NoiseModel(0.3)) == pytest.approx(oracle, rel=1e-12)


def test_length_mismatch():
    with pytest.raises(PreconditionError):
        pmin(np.zeros(3), np.zeros(4), NoiseModel(1.0))
    with pytest.raises(PreconditionError):
        llr_mean(np.zeros(3), np.zeros(4), NoiseModel(1.0))


def test_pmin_identical_is_half():
    a = np.ones(5)
    assert pmin(a, a, NoiseModel(1.0)) == 0.5


def test_pmin_unit_separation():
    a, b, noise = pair_at_separation(1.0)
    assert pmin(a, b, noise) == pytest.approx(0.1586552539314571, abs=1e-6)


@given(st.floats(0, 10), st.floats(0, 10))
def test_pmin_bounded_and_decreasing(r1, r2):
    lo, hi = sorted((r1, r2))
    a, b_lo, noise = pair_at_separation(lo, n=20)
    _, b_hi, _ = pair_at_separation(hi, n=20)
    p_lo, p_hi = pmin(a, b_lo, noise), pmin(a, b_hi, noise)
    assert 0.0 <= p_hi <= p_lo <= 0.5
    if hi - lo > 1e-3 and p_lo > 1e-300:
        assert p_hi < p_lo


def test_pmin_scale_invariance():
    a, b, noise = pair_at_separation(0.8)
    c = 3.0
    assert pmin(c * a, c * b, NoiseModel(c * c * noise.sigma2)) == pytest.approx(pmin(a, b, noise), rel=1e-12)


def test_monte_carlo_pmin_identical():
    a = np.zeros(50)
    p = monte_carlo_pmin(a, a, NoiseModel(1.0), n_trials=20_000, seed=0)
    assert abs(p - 0.5) < 3 * np.sqrt(0.25 / 20_000)


def test_monte_carlo_pmin_matches_closed_form():
    a, b, noise = pair_at_separation(1.0, n=100)
    n = 200_000
    p = pmin(a, b, noise)
    emp = monte_carlo_pmin(a, b, noise, n_trials=n, seed=1)
    assert abs(emp - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_monte_carlo_pmin_seeding():
    a, b, noise = pair_at_separation(0.5, n=50)
    n = 50_000
    x1 = monte_carlo_pmin(a, b, noise, n_trials=n, seed=5)
    x2 = monte_carlo_pmin(a, b, noise, n_trials=n, seed=5)
    y = monte_carlo_pmin(a, b, noise, n_trials=n, seed=6)
    assert x1 == x2
    assert x1 != y
    p = pmin(a, b, noise)
    band = 3 * np.sqrt(p * (1 - p) / n)
    assert abs(x1 - p) < band and abs(y - p) < band


def test_monte_carlo_pmin_needs_trials():
    with pytest.raises(PreconditionError):
        monte_carlo_pmin(np.zeros(2), np.ones(2), NoiseModel(1.0), n_trials=100)


# ZZB

def test_tissue_spec_invariants():
    assert ROW1.delta == 400
    with pytest.raises(PreconditionError):
        TissueSpec("T1", 500, 100, 20)
    with pytest.raises(PreconditionError):
        TissueSpec("T3", 1, 2, 3)
    with pytest.raises(PreconditionError):
        TissueSpec("T1", 1, 2, 3, weight=-1)


def test_quadrature_config_minimum():
    with pytest.raises(PreconditionError):
        QuadratureConfig(8)


def huge_noise(schedule, spec, n_grid):
    m = grid_fingerprints(schedule, spec, EpgConfig(), n_grid)
    return NoiseModel(1e12 * np.max(np.sum(m**2, axis=1)))


@pytest.mark.parametrize("spec,expected", [(ROW1, 13333.33), (ROW8, 75.0)])
def test_zzb_high_noise_limit(spec, expected):
    quad = QuadratureConfig(128)
    val = zzb(SCHED50, spec, huge_noise(SCHED50, spec, 128), quad=quad)
    assert val == pytest.approx(spec.delta**2 / 12, rel=1e-2)
    assert val == pytest.approx(expected, rel=1e-2)


def test_zzb_low_noise_limit():
    quad = QuadratureConfig(64)
    m = grid_fingerprints(SCHED50, ROW1, EpgConfig(), 64)
    d2 = np.sum((m[:, None, :] - m[None, :, :]) ** 2, axis=-1)
    tiny = 1e-12 * d2[d2 > 0].min()
    assert zzb(SCHED50, ROW1, NoiseModel(tiny), quad=quad) < 1e-3 * ROW1.delta**2 / 12


def simpson_zzb(schedule, spec, sigma2, n_nodes):
    """Independent evaluation: direct differences, scipy Simpson, scipy normal tail."""
    theta = np.linspace(spec.range_min, spec.range_max, n_nodes)
    t1, t2 = spec.relaxation_pairs(theta)
    m = simulate_fingerprints(schedule, t1, t2)
    h = theta[1] - theta[0]
    inner = np.zeros(n_nodes)
    for k in range(n_nodes - 1):
        d2 = np.sum((m[k:] - m[: n_nodes - k]) ** 2, axis=1)
        g = norm.sf(np.sqrt(d2 / (4 * sigma2)))
        inner[k] = simpson(g, dx=h) if g.size > 1 else 0.0
    xi = h * np.arange(n_nodes)
    return simpson(xi * inner, dx=h) / spec.delta


def test_zzb_matches_refined_simpson():
    n_grid = 64
    m = grid_fingerprints(SCHED50, ROW8, EpgConfig(), n_grid)
    noise = NoiseModel.from_snr(m, 30)
    val = zzb(SCHED50, ROW8, noise, quad=QuadratureConfig(n_grid))
    ref = simpson_zzb(SCHED50, ROW8, noise.sigma2, 4 * (n_grid - 1) + 1)
    assert 0 < val < ROW8.delta**2 / 12
    assert val == pytest.approx(ref, rel=1e-2)


def test_zzb_monotone_in_noise():
    quad = QuadratureConfig(32)
    m = grid_fingerprints(SCHED50, ROW8, EpgConfig(), 32)
    base = NoiseModel.from_snr(m, 30).sigma2
    vals = [zzb(SCHED50, ROW8, NoiseModel(base * f), quad=quad) for f in (0.1, 0.5, 1, 4, 20)]
    assert all(v >= 0 for v in vals)
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_zzb_scale_invariance():
    m = grid_fingerprints(SCHED50, ROW8, EpgConfig(), 32)
    s2 = NoiseModel.from_snr(m, 30).sigma2
    a = zzb_from_fingerprints(m, ROW8.delta, s2)
    b = zzb_from_fingerprints(3 * m, ROW8.delta, 9 * s2)
    assert b == pytest.approx(a, rel=1e-9)


def test_zzb_batched_matches_single():
    m = grid_fingerprints(SCHED50, ROW8, EpgConfig(), 32)
    stack = np.stack([m, 2 * m])
    out = zzb_from_fingerprints(stack, ROW8.delta, 1e-4)
    assert out[0] == pytest.approx(zzb_from_fingerprints(m, ROW8.delta, 1e-4), rel=1e-12)
    assert out[1] == pytest.approx(zzb_from_fingerprints(2 * m, ROW8.delta, 1e-4), rel=1e-12)


# CRB

CENTER8 = ROW8.center


def test_crb_linear_in_noise():
    a = crb(SCHED50, CENTER8, NoiseModel(1e-4), target="T2")
    b = crb(SCHED50, CENTER8, NoiseModel(2e-4), target="T2")
    assert b == 2 * a


def test_crb_sum_of_squares_structure():
    d = signal_derivative(SCHED50, CENTER8, target="T2")
    noise = NoiseModel(1e-4)
    base = crb_from_derivative(d, noise)
    assert crb_from_derivative(np.append(d, 0.0), noise) == base
    perm = np.random.default_rng(0).permutation(d.size)
    assert crb_from_derivative(d[perm], noise) == pytest.approx(base, rel=1e-13)


def test_crb_matches_richardson_derivative():
    noise = NoiseModel(1e-4)
    val = crb(SCHED50, CENTER8, noise, target="T2", rel_step=1e-3)
    d_h = signal_derivative(SCHED50, CENTER8, target="T2", rel_step=1e-2)
    d_h2 = signal_derivative(SCHED50, CENTER8, target="T2", rel_step=5e-3)
    d_rich = (4 * d_h2 - d_h) / 3
    assert val == pytest.approx(noise.sigma2 / (d_rich @ d_rich), rel=1e-3)


def test_crb_non_identifiable():
    from zzb_mrf.epg_sim import Schedule

    s = Schedule([30.0], [15.0], 3.0)
    with pytest.raises(NonIdentifiableError):
        crb(s, Tissue(1e9, 60), NoiseModel(1.0), target="T1")


# Monte-Carlo MSE

def test_mse_low_noise_is_quantization_floor():
    quad = QuadratureConfig(32)
    h = ROW8.delta / 31
    est = monte_carlo_mse(SCHED50, ROW8, NoiseModel(1e-14), quad=quad, n_trials=2000, seed=0)
    assert est.mse <= h**2 / 4
    assert est.mse == pytest.approx(h**2 / 12, rel=0.1)


def test_mse_high_noise_prior_driven():
    quad = QuadratureConfig(32)
    est = monte_carlo_mse(SCHED50, ROW8, NoiseModel(1e6), quad=quad, n_trials=2000, seed=0)
    assert ROW8.delta**2 / 12 < est.mse < ROW8.delta**2 / 2


def test_mse_respects_bound_at_moderate_snr():
    quad = QuadratureConfig(64)
    m = grid_fingerprints(SCHED50, ROW8, EpgConfig(), 64)
    noise = NoiseModel.from_snr(m, 30)
    est = monte_carlo_mse(SCHED50, ROW8, noise, quad=quad, n_trials=2000, seed=2)
    assert est.mse >= zzb(SCHED50, ROW8, noise, quad=quad) - 2 * est.stderr


def test_mse_deterministic_given_seed():
    quad = QuadratureConfig(16)
    a = monte_carlo_mse(SCHED50, ROW8, NoiseModel(1e-3), quad=quad, n_trials=1000, seed=9)
    b = monte_carlo_mse(SCHED50, ROW8, NoiseModel(1e-3), quad=quad, n_trials=1000, seed=9)
    assert a == b
    with pytest.raises(PreconditionError):
        monte_carlo_mse(SCHED50, ROW8, NoiseModel(1e-3), quad=quad, n_trials=10)
