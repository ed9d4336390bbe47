import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from zzb_mrf.epg_sim import (
    EpgConfig,
    Schedule,
    Tissue,
    signal_derivative,
    simulate_fingerprint,
    simulate_fingerprints,
    simulate_isochromat_reference,
)
from zzb_mrf.errors import NumericError, PreconditionError
from zzb_mrf.seqopt import conventional_schedule

INF = 1e9
WM = Tissue(900, 60)


def nrmse(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def random_feasible(rng, n):
    fa = np.empty(n)
    fa[0] = rng.uniform(10, 180)
    fa[1:] = np.clip(35 + np.cumsum(rng.uniform(-1, 1, n - 1)), 10, 60)
    return Schedule(fa, rng.uniform(12, 15, n), 3.0)


def test_full_tip_without_relaxation():
    s = Schedule([90.0], [15.0], 3.0)
    out = simulate_fingerprint(s, Tissue(INF, INF))
    assert out.shape == (1,)
    assert abs(out[0]) == pytest.approx(1.0, abs=1e-8)


def test_pure_t2_decay_over_echo_time():
    s = Schedule([90.0], [15.0], 3.0)
    ref = simulate_fingerprint(s, Tissue(INF, INF))[0]
    out = simulate_fingerprint(s, Tissue(INF, 3.0))[0]
    assert out / ref == pytest.approx(np.exp(-1.0), rel=1e-7)


def test_matches_isochromats_on_conventional_head():
    s = conventional_schedule(20, seed=0)
    epg = simulate_fingerprint(s, WM)
    iso = simulate_isochromat_reference(s, WM, n_spins=2000)
    assert epg.shape == (20,)
    assert nrmse(epg, iso) < 1e-3


def test_isochromat_single_spin_no_spoiling():
    s = Schedule([90.0], [15.0], 3.0)
    out = simulate_isochromat_reference(s, Tissue(INF, INF), n_spins=1, dephase=False)
    assert abs(out[0]) == pytest.approx(1.0, abs=1e-8)


def test_isochromat_self_convergence():
    s = conventional_schedule(50, seed=1)
    a = simulate_isochromat_reference(s, WM, n_spins=2000)
    b = simulate_isochromat_reference(s, WM, n_spins=4000)
    assert nrmse(a, b) < 1e-4


def test_isochromat_agreement_random_schedule():
    s = random_feasible(np.random.default_rng(7), 50)
    assert nrmse(simulate_fingerprint(s, WM), simulate_isochromat_reference(s, WM, n_spins=2000)) < 1e-3


def test_isochromat_needs_enough_spins_when_spoiling():
    with pytest.raises(PreconditionError):
        simulate_isochromat_reference(Schedule([30.0], [12.0]), WM, n_spins=50)


def test_truncation_error_small_against_exact():
    s = conventional_schedule(50, seed=0)
    exact = simulate_fingerprint(s, WM)
    assert np.array_equal(exact, simulate_fingerprint(s, WM, EpgConfig(n_states=51)))
    trunc = simulate_fingerprint(s, WM, EpgConfig(n_states=25))
    assert nrmse(trunc, exact) < 1e-2


def test_batch_matches_single():
    s = conventional_schedule(30, seed=3)
    t1 = np.array([300.0, 900.0, 2000.0])
    t2 = np.array([20.0, 60.0, 800.0])
    batch = simulate_fingerprints(s, t1, t2)
    for i in range(3):
        assert np.array_equal(batch[i], simulate_fingerprint(s, Tissue(t1[i], t2[i])))


def test_deterministic():
    s = random_feasible(np.random.default_rng(0), 40)
    a = simulate_fingerprint(s, WM)
    b = simulate_fingerprint(s, WM)
    assert np.array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    n=st.integers(1, 60),
    t1=st.floats(10, 5000),
    t2=st.floats(5, 3000),
    eff=st.floats(0, 1),
)
def test_samples_bounded_by_one(seed, n, t1, t2, eff):
    s = random_feasible(np.random.default_rng(seed), n)
    out = simulate_fingerprint(s, Tissue(t1, t2), EpgConfig(inversion_efficiency=eff))
    assert out.shape == (n,)
    assert np.all(np.abs(out) <= 1.0 + 1e-12)


@given(st.floats(1, 1000), st.floats(1, 1000))
def test_single_frame_monotone_in_t2(a, b):
    lo, hi = sorted((a, b))
    if hi - lo < 1e-6 * hi:
        return
    s = Schedule([90.0], [15.0], 3.0)
    m_lo = abs(simulate_fingerprint(s, Tissue(1000, lo))[0])
    m_hi = abs(simulate_fingerprint(s, Tissue(1000, hi))[0])
    assert m_hi > m_lo


@pytest.mark.parametrize(
    "fa,tr,te",
    [
        ([0.0], [15.0], 3.0),
        ([181.0], [15.0], 3.0),
        ([np.nan], [15.0], 3.0),
        ([30.0], [3.0], 3.0),
        ([30.0, 30.0], [15.0], 3.0),
        ([30.0], [15.0], 0.0),
        ([], [], 3.0),
    ],
)
def test_schedule_invariants(fa, tr, te):
    with pytest.raises(PreconditionError):
        Schedule(fa, tr, te)


@pytest.mark.parametrize("t1,t2", [(0, 10), (10, -1), (np.inf, 10)])
def test_tissue_invariants(t1, t2):
    with pytest.raises(PreconditionError):
        Tissue(t1, t2)


def test_tissue_allows_t2_above_t1():
    Tissue(500, 800)


def test_epg_config_invariants():
    with pytest.raises(PreconditionError):
        EpgConfig(n_states=1)
    with pytest.raises(PreconditionError):
        EpgConfig(inversion_efficiency=1.5)


def test_derivative_t1_zero_on_first_echo():
    s = Schedule([30.0], [15.0], 3.0)
    d = signal_derivative(s, Tissue(INF, 60), target="T1", rel_step=1e-2)
    assert abs(d[0]) < 1e-12


def test_derivative_step_halving_agreement():
    s = conventional_schedule(50, seed=0)
    for target in ("T1", "T2"):
        coarse = signal_derivative(s, WM, target=target, rel_step=1e-2)
        fine = signal_derivative(s, WM, target=target, rel_step=1e-3)
        big = np.abs(fine) > 1e-6
        assert np.all(np.abs(coarse[big] - fine[big]) <= 1e-3 * np.abs(fine[big]))


def test_derivative_chain_rule_on_squared_norm():
    s = conventional_schedule(50, seed=0)
    d = signal_derivative(s, WM, target="T2", rel_step=1e-3)
    m = simulate_fingerprint(s, WM)
    via_chain = 2 * m @ d
    h = 1e-3 * WM.t2
    hi = simulate_fingerprint(s, Tissue(WM.t1, WM.t2 + h))
    lo = simulate_fingerprint(s, Tissue(WM.t1, WM.t2 - h))
    direct = (hi @ hi - lo @ lo) / (2 * h)
    assert via_chain == pytest.approx(direct, rel=1e-3)


def test_derivative_rejects_bad_step():
    s = Schedule([30.0], [15.0], 3.0)
    with pytest.raises(PreconditionError):
        signal_derivative(s, WM, rel_step=0.5)
    with pytest.raises(NumericError):
        signal_derivative(s, Tissue(1000, 5e-324), target="T2", rel_step=1e-3)
