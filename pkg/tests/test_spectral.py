import math

import numpy as np
import pytest

from ldmatrix import ensemble as E
from ldmatrix import spectral as S
from ldmatrix._rng import Substream
from ldmatrix.grid import build_grid

LOG2 = math.log(2)


def k_two_point(s):
    return 0.2 * 2.0**s + 0.8 * 2.0 ** (-s)


# ---------------------------------------------------------------------------
# transfer operator


def test_transfer_markov_at_zero(e3, e3_grid):
    out = S.apply_transfer(e3, 0.0, e3_grid, np.ones(e3_grid.size))
    assert np.all(out == pytest.approx(1.0, abs=1e-14))


def test_transfer_scalar_closed_form(two_point):
    g = build_grid(two_point)
    assert S.apply_transfer(two_point, 2.0, g, np.ones(1))[0] == pytest.approx(1.0, abs=1e-14)


def test_transfer_e3_at_e1(e3, e3_grid):
    out = S.apply_transfer(e3, 1.0, e3_grid, np.ones(e3_grid.size))
    assert e3_grid.nodes[-1] == pytest.approx([1.0, 0.0])
    assert out[-1] == pytest.approx(1.7, abs=1e-12)


def test_transfer_transpose_uses_transposed_atoms(e3, e3_grid):
    out = S.apply_transfer(e3, 1.0, e3_grid, np.ones(e3_grid.size), transpose=True)
    # transposed atoms have column sums (3, 2) and (0.5, 0.5); at e1: 0.5*3 + 0.5*0.5
    assert out[-1] == pytest.approx(1.75, abs=1e-12)


# ---------------------------------------------------------------------------
# dominant pair


def test_dominant_pair_two_point(two_point):
    prof = S.dominant_pair(two_point, 2.0)
    assert prof.k == pytest.approx(1.0, abs=1e-10)
    assert np.all(prof.e_s == 1.0)


def test_dominant_pair_identity():
    ens = E.identity(2)
    for s in (0.5, 3.0):
        prof = S.dominant_pair(ens, s, build_grid(ens, resolution=128))
        assert prof.k == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(prof.e_s, 1.0)


def test_profile_invariants(e3, e3_grid):
    prof = S.dominant_pair(e3, 1.0, e3_grid)
    assert prof.k > 0 and np.all(prof.e_s > 0) and prof.e_s.max() == 1.0
    assert prof.nu_s.sum() == pytest.approx(1.0) and np.all(prof.nu_s >= 0)
    assert prof.pi_s.sum() == pytest.approx(1.0) and np.all(prof.pi_s >= 0)
    assert prof.eigen_residual <= 1e-6
    d = prof.to_dict()
    assert {"k", "e_s", "nu_s", "eigen_residual"} <= set(d)


def test_convergence_error_carries_residual(e3, e3_grid):
    with pytest.raises(S.ConvergenceError) as info:
        S.dominant_pair(e3, 1.0, e3_grid, max_iter=2, tol=1e-15)
    assert info.value.residual is not None


def test_transpose_invariance(e3, e3_grid):
    assert S.log_k(e3, 1.0, e3_grid, transpose=True) == pytest.approx(S.log_k(e3, 1.0, e3_grid), abs=1e-6)


def test_norm_independence_of_k(e3):
    e3_two = E.MatrixEnsemble(2, E.NONNEGATIVE, e3.law, norm="two")
    k1 = S.dominant_pair(e3, 1.0, build_grid(e3)).k
    k2 = S.dominant_pair(e3_two, 1.0, build_grid(e3_two)).k
    assert abs(k1 - k2) <= 1e-3


def test_three_dim_profile():
    rng = np.random.default_rng(0)
    ens = E.finite([rng.uniform(0.1, 1, (3, 3)) for _ in range(2)], [0.5, 0.5])
    prof = S.dominant_pair(ens, 1.0, build_grid(ens, resolution=512))
    exact = S.enum_moment(ens, 1.0, 12) / S.enum_moment(ens, 1.0, 11)
    assert prof.k == pytest.approx(exact, rel=2e-2)


# ---------------------------------------------------------------------------
# moment oracles


def test_enum_moment_examples(e3):
    assert S.enum_moment(E.two_point(), 2.0, 1) == pytest.approx(1.0, abs=1e-15)
    assert S.enum_moment(E.identity(2), 1.7, 5) == 1.0
    mats = e3.law.matrices
    by_hand = np.mean([E.opnorm(b @ a) for a in mats for b in mats])
    assert S.enum_moment(e3, 1.0, 2) == pytest.approx(by_hand, rel=1e-15)


def test_enum_budget(e3):
    with pytest.raises(S.BudgetExceeded):
        S.enum_moment(e3, 1.0, 30)


def test_mc_moment_degenerate():
    ens = E.finite([[[1.5]]], [1.0])
    est, se = S.mc_moment(ens, 2.0, 7, 1000, Substream(1))
    assert est == pytest.approx(1.5**14, rel=1e-12) and se == 0.0


def test_mc_moment_lognormal(lognormal):
    est, se = S.mc_moment(lognormal, 0.5, 1, 100_000, Substream(2))
    assert abs(est - math.exp(-0.25 + 0.125)) <= 3 * se


def test_mc_moment_vs_enum(e3):
    est, se = S.mc_moment(e3, 1.0, 10, 100_000, Substream(3))
    assert abs(est - S.enum_moment(e3, 1.0, 10)) <= 3 * se


def test_mc_moment_needs_paths(e3):
    with pytest.raises(ValueError):
        S.mc_moment(e3, 1.0, 3, 10, Substream(0))


# ---------------------------------------------------------------------------
# cumulant function


def test_cgf_lognormal(lognormal):
    (p,) = S.cgf_profile(lognormal, build_grid(lognormal), [1.0])
    assert p.log_k == pytest.approx(0.0, abs=1e-12)
    assert p.q == pytest.approx(0.5, abs=1e-6)
    assert p.sigma2 == pytest.approx(1.0, abs=1e-6)
    assert p.m3 == pytest.approx(0.0, abs=1e-6)
    assert p.fd_step == S.DEFAULT_FD_STEP and set(p.fd_check) == {"q", "sigma2", "m3"}


def test_cgf_two_point_gamma(two_point):
    (p,) = S.cgf_profile(two_point, build_grid(two_point), [0.0])
    assert p.q == pytest.approx(-0.6 * LOG2, abs=1e-8)


def test_convexity(e3, e3_grid):
    for p in S.cgf_profile(e3, e3_grid, np.linspace(-1, 3, 9)):
        assert p.sigma2 >= -1e-8


def test_stencil_outside_domain():
    ens = E.skewed_exponential()
    with pytest.raises(S.DomainError):
        S.cgf_profile(ens, build_grid(ens), [0.999])


def test_profile_table_columns(two_point):
    rows = S.profile_table(S.cgf_profile(two_point, build_grid(two_point), [0.0, 1.0]))
    assert list(rows[0]) == ["s", "k", "Lambda", "dLambda", "d2Lambda", "d3Lambda", "eigen_residual", "fd_step"]


# ---------------------------------------------------------------------------
# alpha and the rate function


def test_alpha_examples(two_point, lognormal):
    assert S.solve_alpha(two_point) == pytest.approx(2.0, abs=1e-8)
    assert S.solve_alpha(lognormal) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(S.NoRootInBracket):
        S.solve_alpha(E.identity(2), build_grid(E.identity(2), resolution=64))


def test_alpha_transposed_law_equal():
    ens = E.arch2()
    g = build_grid(ens)
    assert S.solve_alpha(ens, g) == pytest.approx(S.solve_alpha(ens.transposed(), g), abs=1e-6)


def test_rate_function_lognormal(lognormal):
    pt = S.rate_function(lognormal, None, 0.5)
    assert pt.s == pytest.approx(1.0, abs=1e-8)
    assert pt.lambda_star == pytest.approx(0.5, abs=1e-8)


def test_rate_function_at_mean(two_point):
    pt = S.rate_function(two_point, None, -0.6 * LOG2)
    assert pt.s == pytest.approx(0.0, abs=1e-6)
    assert pt.lambda_star == pytest.approx(0.0, abs=1e-9)


def test_rate_function_edges(two_point):
    pt = S.rate_function(two_point, None, LOG2)
    assert pt.s == 20.0
    with pytest.raises(S.DriftUnattainable):
        S.rate_function(two_point, None, LOG2 + 1e-3)


def test_rate_function_nonnegative(e3, e3_grid):
    for q in (0.0, 0.2, 0.7, 0.9):
        assert S.rate_function(e3, e3_grid, q).lambda_star >= -1e-9


# ---------------------------------------------------------------------------
# Lyapunov exponent


def test_lyapunov_degenerate():
    est, se = S.lyapunov(E.finite([[[3.0]]], [1.0]), 10, 200, Substream(0))
    # identical paths: exact up to summation rounding
    assert est == pytest.approx(math.log(3), abs=1e-14) and se <= 1e-15


def test_lyapunov_two_point(two_point):
    est, se = S.lyapunov(two_point, 100, 10_000, Substream(1))
    assert abs(est + 0.6 * LOG2) <= 3 * se


def test_lyapunov_needs_length(two_point):
    with pytest.raises(ValueError):
        S.lyapunov(two_point, 5, 200, Substream(1))


def test_k_closed_form_scalar(two_point):
    for s in (-1.0, 0.5, 3.0):
        assert S.dominant_pair(two_point, s).k == pytest.approx(k_two_point(s), abs=1e-12)
