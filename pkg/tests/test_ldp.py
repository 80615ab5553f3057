import math

import numpy as np
import pytest
from scipy import stats

from ldmatrix import ensemble as E
from ldmatrix import ldp as L
from ldmatrix import spectral as S
from ldmatrix import tilt as T
from ldmatrix._rng import Substream
from ldmatrix.grid import build_grid

ONE = np.array([1.0])


@pytest.fixture(scope="module")
def two_point_profile(two_point):
    return S.profile_at(two_point, 1.0, build_grid(two_point))


def test_threshold_hits_tolerance():
    hits = L.threshold_hits(np.array([1.0 - 1e-12, 0.99]), 10, 0.1)
    assert hits.tolist() == [True, False]
    assert L.threshold_hits(np.array([-1e300]), 5, -math.inf).all()


def test_naive_minus_infinity(e3):
    res = L.naive_tail(np.array([0.5, 0.5]), e3, 10, -math.inf, 1000, Substream(0))
    est, se = res
    assert est == 1.0 and se == 0.0 and res.hits == res.paths == 1000


def test_naive_zero_hits_bound(lognormal):
    res = L.naive_tail(ONE, lognormal, 25, 0.5, 10_000, Substream(1))
    assert res.hits == 0 and res.estimate == 0.0
    assert res.upper_bound == pytest.approx(1 - 0.05 ** (1 / 10_000), rel=1e-12)


def test_naive_needs_paths(lognormal):
    with pytest.raises(ValueError):
        L.naive_tail(ONE, lognormal, 5, 0.0, 100, Substream(1))


def test_naive_binomial(two_point):
    res = L.naive_tail(ONE, two_point, 20, 0.0, 50_000, Substream(2))
    exact = stats.binom.sf(9, 20, 0.2)
    assert abs(res.estimate - exact) <= 3 * res.se


def test_tilted_lognormal_extreme(lognormal_profile):
    est = L.tilted_tail(ONE, lognormal_profile, 100, paths=100_000, stream=3)
    mean, se = est.tilted
    exact = stats.norm.sf(10.0)
    assert abs(mean - exact) <= 3 * se and se / mean < 0.05
    assert est.prediction == pytest.approx(math.exp(-50) / math.sqrt(200 * math.pi))


def test_tilted_binomial(two_point_profile):
    est = L.tilted_tail(ONE, two_point_profile, 20, paths=50_000, stream=4)
    assert two_point_profile.q == pytest.approx(0.0, abs=1e-9)
    exact = stats.binom.sf(9, 20, 0.2)
    assert abs(est.tilted[0] - exact) <= 3 * est.tilted[1]
    # scalar laws have e == 1, so both estimators coincide
    assert est.tilted == pytest.approx(est.tilted_prob)


def test_tilted_monotone_in_q(e3_profile):
    qs = np.linspace(0.3, 0.7, 9)
    ests = L.tilted_tail(np.array([0.5, 0.5]), e3_profile, 40, qs, paths=5000, stream=5)
    vals = [e.tilted[0] for e in ests]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert [e.q for e in ests] == pytest.approx(qs)


def test_tilted_deterministic_bound(e3_profile):
    x0 = np.array([0.5, 0.5])
    n = 60
    est = L.tilted_tail(x0, e3_profile, n, paths=5000, stream=6)
    lam_star = e3_profile.s * e3_profile.q - e3_profile.log_k
    # every weighted term is at most e(x0) exp(-n Lambda*) on the event
    assert est.tilted[0] <= e3_profile.e_at(x0) * math.exp(-n * lam_star) * (1 + 1e-12)


def test_zero_tilt_reduces_to_naive(e3, e3_grid):
    prof = S.profile_at(e3, 0.0, e3_grid)
    x0 = np.array([0.5, 0.5])
    est = L.tilted_tail(x0, prof, 20, prof.q + 0.05, paths=20_000, stream=7)
    naive = L.naive_tail(x0, e3, 20, prof.q + 0.05, 20_000, Substream(8))
    assert math.isnan(est.prediction)
    assert abs(est.tilted[0] - naive.estimate) <= 3 * math.hypot(est.tilted[1], naive.se)


def test_low_ess_flag(lognormal_profile):
    est = L.tilted_tail(ONE, lognormal_profile, 25, 3.0, paths=2000, stream=9)
    assert est.low_ess and est.ess < 20


def test_row_columns(lognormal_profile):
    row = L.tilted_tail(ONE, lognormal_profile, 10, paths=1000, stream=0).row()
    assert list(row) == [
        "n", "q", "s", "naive", "naive_SE", "naive_upper", "tilted", "tilted_SE",
        "tilted_prob", "tilted_prob_SE", "prediction", "ratio",
    ]


# ---------------------------------------------------------------------------
# precise prediction


def test_br_prediction_example(lognormal_profile):
    pred = L.br_prediction(ONE, lognormal_profile, 400)
    assert pred == pytest.approx(math.exp(-200) / math.sqrt(2 * math.pi * 400), rel=1e-8)


def test_br_prediction_scaling(e3_profile):
    x0 = np.array([0.2, 0.8])
    lam_star = e3_profile.s * e3_profile.q - e3_profile.log_k
    a, b = L.br_prediction(x0, e3_profile, 50), L.br_prediction(x0, e3_profile, 200)
    assert b / a == pytest.approx(math.exp(-150 * lam_star) * 0.5, rel=1e-10)


def test_br_prediction_degenerate():
    ens = E.finite([[[2.0]]], [1.0])
    prof = S.profile_at(ens, 1.0, build_grid(ens))
    with pytest.raises(L.DegenerateVariance):
        L.br_prediction(ONE, prof, 10)


# ---------------------------------------------------------------------------
# Edgeworth


def test_dkw_band():
    assert L.dkw_band(10_000) == pytest.approx(math.sqrt(math.log(200) / 20_000))


def test_edgeworth_normal_limit():
    u = np.array([-40.0, 0.0, 40.0])
    g = L.edgeworth_cdf(u, 100, 1.0, 0.7, 0.3)
    assert abs(g[0]) <= 1e-6 and abs(g[-1] - 1) <= 1e-6
    assert g[1] == pytest.approx(0.5 + (0.7 / 60 - 0.03) / math.sqrt(2 * math.pi))


def test_edgeworth_report_invariants(e3_profile):
    bias = T.bias_function(e3_profile)
    rep = L.edgeworth_curve(np.array([0.5, 0.5]), e3_profile, bias, 100, 20_000, stream=10)
    assert np.all(np.diff(rep.F_hat) >= 0)
    assert rep.F_hat[0] <= rep.F_hat[-1] <= 1.0
    assert rep.sup_gap >= np.max(np.abs(rep.F_hat - rep.G_n)) - 1e-15
    assert rep.scaled_gap == pytest.approx(10 * rep.sup_gap)
    assert rep.scaled_gap < 1.0
    assert len(rep.rows()) == 201


def test_edgeworth_lognormal_gap(lognormal_profile):
    rep = L.edgeworth_curve(ONE, lognormal_profile, None, 50, 50_000, stream=11)
    assert rep.sup_gap <= rep.dkw99


def test_edgeworth_rejects_degenerate():
    ens = E.finite([[[2.0]]], [1.0])
    prof = S.profile_at(ens, 1.0, build_grid(ens))
    with pytest.raises(L.DegenerateVariance):
        L.edgeworth_curve(ONE, prof, None, 10, 1000)
