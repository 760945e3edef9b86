import numpy as np
import pytest

from fire_ts.analytics import (AdwinState, adwin_update, analyze_channel, analyze_series,
                               basis_energy, cut_threshold, drift_degree, evolution_degree)
from oracles import exact_adwin, naive_dft, relative_energy_change


def _step(seed, n=5000, sigma=0.1, size=5.0):
    rng = np.random.default_rng(seed)
    return np.r_[rng.normal(0, sigma, n), rng.normal(size, sigma, n)]


# --- ADWIN ------------------------------------------------------------------------

def test_constant_stream_no_detections():
    assert drift_degree(np.full(10_000, 3.3)).n_change == 0


@pytest.mark.parametrize("seed", range(5))
def test_step_detected_within_200(seed):
    rep = drift_degree(_step(seed))
    after = [i for i in rep.change_indices if i >= 5000]
    assert after and after[0] - 5000 <= 200
    assert not [i for i in rep.change_indices if i < 5000]


def test_alternating_stream_no_detections():
    assert drift_degree(np.tile([1.0, -1.0], 5000)).n_change == 0


def test_update_returns_state_and_flag():
    st = AdwinState()
    st2, flag = adwin_update(st, 1.0)
    assert st2 is st and flag is False and st.width == 1


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        AdwinState().update(float("nan"))


def test_bucket_counts_are_powers_of_two_and_sum_to_width():
    st = AdwinState()
    rng = np.random.default_rng(0)
    for v in rng.standard_normal(3000):
        st.update(v)
        counts = st.bucket_counts()
        assert sum(counts) == st.width
        assert all(c & (c - 1) == 0 for c in counts)
    assert max(len(r) for r in st.rows) <= st.max_buckets
    assert len(st.rows) <= 12  # logarithmic memory


def test_window_mean_and_variance_track_contents():
    st = AdwinState()
    vals = np.random.default_rng(1).standard_normal(500)
    for v in vals:
        st.update(v)
    assert st.width == 500  # stationary, nothing dropped
    assert st.mean == pytest.approx(vals.mean(), rel=1e-10)
    assert st.variance / st.width == pytest.approx(vals.var(), rel=1e-10)


def test_window_shrinks_after_step():
    st = AdwinState()
    for v in _step(2, n=1000):
        st.update(v)
    assert st.width < 1000
    assert st.mean == pytest.approx(5.0, abs=0.05)


def test_cut_threshold_shrinks_with_more_data():
    assert cut_threshold(500, 500, 1.0, 0.002, 5) < cut_threshold(50, 50, 1.0, 0.002, 5)


def _first_after(hits, points, reach):
    out = []
    for p in points:
        nxt = [h for h in hits if p <= h < p + reach]
        out.append(nxt[0] if nxt else None)
    return out


@pytest.mark.parametrize("seed", range(6))
def test_agrees_with_exact_scan_on_steps(seed):
    rng = np.random.default_rng(seed)
    points = [500, 1000, 1500]
    levels = rng.choice([-3.0, 3.0], size=3).cumsum()
    x = rng.standard_normal(2000) + np.repeat(np.r_[0.0, levels], [500, 500, 500, 500])
    ours = drift_degree(x).change_indices
    exact = exact_adwin(x)
    a = _first_after(ours, points, 400)
    b = _first_after(exact, points, 400)
    for p, u, v in zip(points, a, b):
        assert u is not None and v is not None, (p, ours, exact)
        assert abs(u - v) <= 64
    assert not [h for h in ours if h < points[0]]
    assert not [h for h in exact if h < points[0]]


@pytest.mark.parametrize("seed", range(6))
def test_agrees_with_exact_scan_on_stationary(seed):
    x = np.random.default_rng(seed + 50).standard_normal(2000) * (seed + 1)
    assert drift_degree(x).change_indices == [] == exact_adwin(x)


def test_drift_degree_ratio():
    rep = drift_degree(_step(0, n=1000))
    assert rep.degree == rep.n_change / rep.n_total and rep.n_total == 2000


def test_drift_degree_needs_two_values():
    with pytest.raises(ValueError):
        drift_degree([1.0])


# --- energies ------------------------------------------------------------------------

def test_constant_energy_is_dc_only():
    E = basis_energy(np.full(64, 2.0), 16, 8)
    assert np.all(E[:, 0] == pytest.approx(1024.0))
    assert np.max(E[:, 1:]) < 1e-20


def test_cosine_energy_single_bin():
    n = np.arange(64)
    E = basis_energy(np.cos(2 * np.pi * n / 16), 16, 8)
    assert np.all(E[:, 1] == pytest.approx(64.0))
    assert np.max(np.delete(E, 1, axis=1)) < 1e-20


def test_energy_matches_naive_dft():
    x = np.random.default_rng(0).standard_normal(50)
    E = basis_energy(x, 12, 5)
    for q in range(E.shape[0]):
        np.testing.assert_allclose(E[q], np.abs(naive_dft(x[5 * q:5 * q + 12])[:7]) ** 2,
                                   atol=1e-9)


# --- evolution --------------------------------------------------------------------------

def test_identical_patches_degree_zero():
    assert evolution_degree(np.ones((5, 3))).degree == 0.0


def test_doubling_energies_degree_one():
    E = 2.0 ** np.arange(6)[:, None] * np.ones((6, 4))
    rep = evolution_degree(E, eps=0.5, tau=0.5)
    assert rep.degree == 1.0 and rep.per_patch_flags == [False] + [True] * 5


def test_hand_example():
    rep = evolution_degree(np.array([[1.0, 1.0], [1.0, 3.0]]), eta=1e-8, eps=0.5, tau=0.6)
    assert rep.evolving_fraction_per_patch == [0.0, 0.5]
    assert rep.degree == 0.0


def test_relative_changes_match_loop_oracle():
    E = np.random.default_rng(3).random((8, 5)) * 10
    rel = relative_energy_change(E, 1e-8)
    for eps in (0.1, 0.5, 1.0):
        rep = evolution_degree(E, eta=1e-8, eps=eps, tau=0.4)
        frac = (rel > eps).mean(axis=1)
        np.testing.assert_allclose(rep.evolving_fraction_per_patch[1:], frac)
        assert rep.degree == np.sum(frac > 0.4) / 7


def test_evolution_monotone_in_eps_and_tau():
    E = basis_energy(np.random.default_rng(4).standard_normal(800), 16, 8)
    degs = [evolution_degree(E, eps=e).degree for e in (0.1, 0.3, 0.5, 1.0, 2.0, 5.0)]
    assert all(a >= b for a, b in zip(degs, degs[1:]))
    degs = [evolution_degree(E, tau=t).degree for t in (0.1, 0.3, 0.5, 0.7, 1.0)]
    assert all(a >= b for a, b in zip(degs, degs[1:]))
    assert 0.0 <= min(degs) and max(degs) <= 1.0


def test_evolution_scale_invariant_with_scaled_eta():
    E = basis_energy(np.random.default_rng(5).standard_normal(400), 16, 8)
    a = evolution_degree(E, eta=1e-6)
    b = evolution_degree(E * 1000.0, eta=1e-3)
    assert a.evolving_fraction_per_patch == pytest.approx(b.evolving_fraction_per_patch)
    assert a.degree == b.degree


def test_evolution_validation():
    with pytest.raises(ValueError, match="at least 2"):
        evolution_degree(np.ones((1, 4)))
    with pytest.raises(ValueError):
        evolution_degree(np.ones((3, 4)), tau=0.0)


# --- per-channel reports --------------------------------------------------------------------

def test_analyze_channel_reports_params():
    out = analyze_channel(np.full(200, 1.0))
    assert out["d_drift"] == 0 and out["d_evolution"] == 0
    assert out["params"]["adwin_delta"] == 0.002 and out["params"]["patch_len"] == 16


def test_analyze_series_parallel_matches_serial():
    rng = np.random.default_rng(0)
    vals = np.c_[np.full(600, 1.0), _step(1, n=300), rng.standard_normal(600)]
    names = ("a", "b", "c")
    serial = analyze_series(vals, names)
    par = analyze_series(vals, names, jobs=2)
    assert serial == par
    assert serial["b"]["n_change"] >= 1 and serial["a"]["n_change"] == 0
