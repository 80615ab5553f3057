import math

import numpy as np
import pytest
from scipy import stats

from ldmatrix import ensemble as E
from ldmatrix import kesten as K
from ldmatrix._rng import Substream


def scalar_model(m, b):
    return K.RdeModel(E.finite([[[m]]], [1.0], shifts=[[b]]))


@pytest.fixture(scope="module")
def arch():
    return K.arch2_preset()


@pytest.fixture(scope="module")
def arch_draws(arch):
    return K.rde_sample(arch, 200_000, stream=Substream(11))


def test_model_needs_shift():
    with pytest.raises(E.EnsembleError):
        K.RdeModel(E.e3())


def test_constant_contraction_fixed_point():
    draws = K.rde_sample(scalar_model(0.5, 1.0), 1000, stream=0)
    assert np.allclose(draws.R, 2.0, rtol=1e-15, atol=0)
    # 0.5^k <= 1e-16 * 2 first holds at k = 53
    assert draws.max_depth == 53


def test_divergence_reports_trace():
    with pytest.raises(K.DivergenceError) as info:
        K.rde_sample(scalar_model(1.5, 1.0), 10, depth=20)
    assert len(info.value.trace) == 20 and info.value.trace[-1][1] == pytest.approx(20 * math.log(1.5))


def test_truncation_tolerance_is_honest(arch):
    coarse = K.rde_sample(arch, 2000, tol=1e-6, stream=3)
    fine = K.rde_sample(arch, 2000, tol=1e-16, stream=3)
    assert fine.max_depth > coarse.max_depth
    # stopped draws consume fewer variates, so compare laws rather than paths
    assert stats.ks_2samp(coarse.R[:, 0], fine.R[:, 0]).pvalue > 0.001


def test_sampling_is_thread_independent(arch):
    a = K.rde_sample(arch, 20_000, stream=Substream(5, threads=1))
    b = K.rde_sample(arch, 20_000, stream=Substream(5, threads=4))
    assert np.array_equal(a.R, b.R)


def test_arch_preset_orientation(arch):
    _, M, B = arch.ensemble.draw(np.random.default_rng(0), 100)
    assert np.allclose(M[:, 0, 0], 0.3 * M[:, 1, 0]) and np.allclose(M[:, 0, 1], 0.25)
    assert np.all(M[:, 1, 1] == 0) and np.all(B == [1.0, 0.0])
    assert arch.notes["a1"] == 0.3 and "allowable" in arch.notes


def test_model_from_config():
    assert K.model_from_config({"preset": "arch2", "params": {"a1": 0.2}}).notes["a1"] == 0.2
    assert K.model_from_config({"preset": "lognormal"}).dim == 1
    cfg = scalar_model(0.5, 1.0).ensemble.to_config()
    assert K.model_from_config(cfg).ensemble.law.shifts[0, 0] == 1.0


# ---------------------------------------------------------------------------
# Kesten condition and moments


def test_kesten_condition_examples():
    ones = [[1.0, 1.0], [1.0, 1.0]]
    sat = K.kesten_condition(K.RdeModel(E.finite([ones], [1.0], shifts=[[1.0, 0.0]])))
    assert sat.satisfied and sat.witness == pytest.approx(0.1)
    small = K.RdeModel(E.finite([0.1 * np.array(ones)], [1.0], shifts=[[1.0, 0.0]]))
    ok, witness = K.kesten_condition(small)
    assert not ok and witness is None


def test_kesten_condition_arch(arch):
    cond = K.kesten_condition(arch)
    # min row sum is min(a1 e^2 + a2, e^2); E of its s-th power grows like E e^(2s)
    assert cond.satisfied and 1.0 < cond.witness < 20.0


def test_moment_bound_constant():
    (row,) = K.moment_bound_scan(scalar_model(0.5, 1.0), [1.0])
    assert row["bound"] == pytest.approx(2.0) and row["block"] == 1 and row["finite"]


def test_moment_bound_infinite_when_not_contracting():
    (row,) = K.moment_bound_scan(scalar_model(2.0, 1.0), [1.0], m_max=4)
    assert row["bound"] == math.inf and not row["finite"]


def test_moment_bound_below_one():
    (row,) = K.moment_bound_scan(scalar_model(0.5, 1.0), [0.5])
    # subadditive form: (1 / (1 - 0.5^0.5))^2
    assert row["bound"] == pytest.approx((1 / (1 - math.sqrt(0.5))) ** 2)
    assert row["bound"] >= 2.0


def test_moment_bound_rejects_nonpositive_order():
    with pytest.raises(ValueError):
        K.moment_bound_scan(scalar_model(0.5, 1.0), [0.0])


def test_moment_scan_arch(arch, arch_draws):
    alpha = K.theory_values(arch, np.array([1.0, 0.0]))[0]
    rows = K.moment_bound_scan(arch, [0.5 * alpha], draws=arch_draws, stream=1)
    r = rows[0]
    assert r["finite"] and r["empirical"] <= r["bound"]
    assert r["empirical_half"] == pytest.approx(r["empirical"], rel=0.1)


# ---------------------------------------------------------------------------
# fixed point and tails


def test_fixed_point_lognormal():
    res = K.fixed_point_test(K.lognormal_preset(), 50_000, stream=2)
    assert res.passed(0.001) and len(res.p_values) == 1


def test_fixed_point_arch(arch):
    res = K.fixed_point_test(arch, 50_000, stream=3)
    assert res.passed(0.001) and res.directions.shape == (3, 2)


def test_fixed_point_detects_wrong_law():
    model = K.lognormal_preset()
    R = K.rde_sample(model, 20_000, stream=4).R[:, 0]
    assert stats.ks_2samp(R, 1.1 * R).pvalue < 1e-6


def test_tail_report_needs_positive_mass():
    with pytest.raises(K.InsufficientTailData):
        K.tail_report(scalar_model(0.5, -1.0), [1.0], 100_000, with_theory=False)


def test_tail_report_min_samples():
    with pytest.raises(ValueError):
        K.tail_report(K.lognormal_preset(), [1.0], 1000)


def test_hill_exact_pareto():
    rng = np.random.default_rng(0)
    y = np.sort(rng.pareto(1.5, 100_000) + 1.0)[::-1]
    est = K.hill_trace(y, np.array([1000, 5000]))
    assert np.allclose(est, 1.5, rtol=0.1)


def test_direction_ranking(arch, arch_draws):
    reports = [K.tail_report(arch, x, 200_000, draws=arch_draws) for x in ([1.0, 0.0], [0.0, 1.0])]
    e_ratio = reports[1].e_alpha_at_x / reports[0].e_alpha_at_x
    tail_ratio = reports[1].t_alpha_ccdf[-10:].mean() / reports[0].t_alpha_ccdf[-10:].mean()
    assert e_ratio > 1 and tail_ratio > 1
    assert reports[0].alpha_theory == pytest.approx(2.5995, abs=1e-3)
    assert len(reports[0].rows()) == 40 and reports[0].summary()["samples"] == 200_000
