"""Stationary solutions of ``R = M R + B`` and their power-law tails.

Draws use the backward series ``R = sum_k M_1 ... M_{k-1} B_k``.  Spectral
quantities that govern the tail (``alpha`` and ``e_alpha``) are computed for
the transposed law ``A = M^T``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import special, stats

from . import ensemble as ens_mod
from ._rng import as_stream
from .ensemble import NONNEGATIVE, LdmatrixError, MatrixEnsemble, normalize, opnorm, vnorm
from .grid import SphereGrid, build_grid
from .spectral import BudgetExceeded, dominant_pair, enum_moment, mc_moment, solve_alpha

log = logging.getLogger(__name__)

BOOTSTRAP_RESAMPLES = 200


class DivergenceError(LdmatrixError, RuntimeError):
    """The running product did not decay within the depth budget."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class InsufficientTailData(LdmatrixError, ValueError):
    pass


@dataclass
class RdeModel:
    """Joint law of ``(M, B)``; ``ensemble`` carries ``M`` and its shift law."""

    ensemble: MatrixEnsemble
    name: str = ""
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.ensemble.has_shift:
            raise ens_mod.EnsembleError("an RDE model needs a shift law for B")
        self.name = self.name or self.ensemble.name

    @property
    def dim(self) -> int:
        return self.ensemble.dim

    @property
    def transposed_ensemble(self) -> MatrixEnsemble:
        return self.ensemble.transposed()


def arch2_preset(a1: float = 0.3, a2: float = 0.25) -> RdeModel:
    """Squared ARCH(2) model ``M = [[a1 e^2, a2], [e^2, 0]]``, ``B = (1, 0)``."""
    ens = ens_mod.arch2(a1, a2, transpose=False)
    notes = {
        "allowable": "always (a2 > 0 and e^2 > 0 almost surely)",
        "iota_lower_bound": f"min({a1} e^2, {a2})",
        "a1": a1,
        "a2": a2,
    }
    return RdeModel(ens, name="arch2", notes=notes)


def lognormal_preset(mean: float = -0.5, var: float = 1.0, b: float = 1.0) -> RdeModel:
    """Scalar model with ``log M ~ N(mean, var)`` and ``B = b``."""
    return RdeModel(ens_mod.lognormal_scalar(mean, var, shift=b), name="lognormal")


def model_from_config(cfg: dict) -> RdeModel:
    if cfg.get("preset") == "arch2":
        return arch2_preset(**cfg.get("params", {}))
    if cfg.get("preset") == "lognormal":
        return lognormal_preset(**cfg.get("params", {}))
    return RdeModel(ens_mod.ensemble_from_config(cfg))


# ---------------------------------------------------------------------------
# sampling


@dataclass
class RdeSample:
    R: np.ndarray
    depth: np.ndarray  # number of terms used per draw

    @property
    def max_depth(self) -> int:
        return int(self.depth.max()) if self.depth.size else 0


def _backward_block(model: RdeModel, rng, size: int, depth: int, tol: float):
    d = model.dim
    norm = model.ensemble.norm
    R = np.zeros((size, d))
    P = np.broadcast_to(np.eye(d), (size, d, d)).copy()
    used = np.zeros(size, dtype=np.int64)
    active = np.arange(size)
    trace = []
    for k in range(1, depth + 1):
        _, M, B = model.ensemble.draw(rng, active.size)
        Pa = P[active]
        R[active] += np.einsum("nij,nj->ni", Pa, B)
        Pa = np.einsum("nij,njk->nik", Pa, M)
        P[active] = Pa
        used[active] = k
        pn = opnorm(Pa, norm)
        done = pn <= tol * np.maximum(vnorm(R[active], norm), 1e-300)
        if not done.all():
            trace.append((k, float(np.log(pn[~done].max()))))
        active = active[~done]
        if active.size == 0:
            return R, used
    raise DivergenceError(
        f"{active.size} draws still active after {depth} terms; largest running-product log-norms {trace[-3:]}",
        trace=trace,
    )


def rde_sample(model: RdeModel, samples: int, depth: int = 10_000, tol: float = 1e-16, stream=0) -> RdeSample:
    """Draw ``samples`` copies of ``R`` by the backward series.

    A draw stops once ``||M_1 ... M_k|| <= tol * |R_partial|``.  The number of
    terms is recorded per draw.

    Raises
    ------
    DivergenceError
        If some draw is still running after ``depth`` terms.
    """
    st = as_stream(stream, "rde_sample")
    parts = st.map_blocks(lambda rng, a, b: _backward_block(model, rng, b - a, depth, tol), samples)
    return RdeSample(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


# ---------------------------------------------------------------------------
# tails


def hill_trace(sorted_desc: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Hill estimates ``1 / (mean(log y_(1..k)) - log y_(k+1))`` for each ``k``."""
    logs = np.log(sorted_desc)
    csum = np.cumsum(logs)
    return 1.0 / (csum[ks - 1] / ks - logs[ks])


def plateau(trace: np.ndarray, window: int) -> int:
    """Center index of the window of ``trace`` with minimum variance."""
    window = max(2, min(window, trace.size))
    var = np.array([trace[i : i + window].var() for i in range(trace.size - window + 1)])
    return int(np.argmin(var)) + window // 2


def _bootstrap_hill(sorted_desc: np.ndarray, k: int, rng: np.random.Generator, resamples: int) -> np.ndarray:
    # Poisson bootstrap: the top k of a resample only involve the leading
    # stretch of the sorted data, so weights are drawn for a prefix only.
    logs = np.log(sorted_desc)
    out = np.empty(resamples)
    for b in range(resamples):
        m = min(logs.size, 2 * k + 200)
        while True:
            w = rng.poisson(1.0, size=m).astype(float)
            cw = np.cumsum(w)
            if cw[-1] >= k + 1 or m == logs.size:
                break
            m = min(logs.size, 2 * m)
        j = int(np.searchsorted(cw, k + 1))  # index of the (k+1)-th resampled value
        j = min(j, logs.size - 1)
        take = w[:j].copy()
        top_sum = np.dot(take, logs[:j]) + (k - take.sum()) * logs[j]
        out[b] = 1.0 / (top_sum / k - logs[j])
    return out


@dataclass
class TailReport:
    x: np.ndarray
    t: np.ndarray
    ccdf: np.ndarray
    t_alpha_ccdf: np.ndarray
    k_grid: np.ndarray
    hill_trace: np.ndarray
    k_star: int
    alpha_hat: float
    ci: tuple
    alpha_theory: float
    e_alpha_at_x: float
    samples: int
    positive: int
    max_depth: int

    def rows(self) -> List[dict]:
        return [
            {"t": float(a), "CCDF": float(b), "t_alpha_CCDF": float(c)}
            for a, b, c in zip(self.t, self.ccdf, self.t_alpha_ccdf)
        ]

    def summary(self) -> dict:
        return {
            "x": self.x.tolist(),
            "alpha_hat": self.alpha_hat,
            "ci": list(self.ci),
            "alpha_theory": self.alpha_theory,
            "e_alpha_at_x": self.e_alpha_at_x,
            "k_star": self.k_star,
            "samples": self.samples,
            "positive": self.positive,
            "max_depth": self.max_depth,
            "hill_trace": {"k": self.k_grid.tolist(), "alpha": self.hill_trace.tolist()},
        }


def theory_values(model: RdeModel, x: np.ndarray, grid: Optional[SphereGrid] = None):
    """``alpha`` solving ``k(alpha) = 1`` for ``M^T`` and ``e_alpha(x)``."""
    law = model.transposed_ensemble
    grid = grid or build_grid(law)
    alpha = solve_alpha(law, grid)
    prof = dominant_pair(law, alpha, grid, with_adjoint=False)
    xn = normalize(np.asarray(x, dtype=float), law.norm, law.cone)
    return alpha, float(prof.e_at(xn))


def tail_report(
    model: RdeModel,
    x,
    samples: int,
    stream=0,
    draws: Optional[RdeSample] = None,
    n_k: int = 60,
    window: int = 10,
    n_t: int = 40,
    grid: Optional[SphereGrid] = None,
    with_theory: bool = True,
) -> TailReport:
    """Tail index of ``<x, R>`` from ``samples`` backward-series draws.

    The Hill trace runs over ``n_k`` log-spaced ``k`` in ``[sqrt(N), N/10]``;
    the reported ``alpha_hat`` sits at the center of the minimum-variance
    window, with a 95% percentile interval from a Poisson bootstrap.
    """
    if samples < 100_000:
        raise ValueError("tail_report needs at least 1e5 samples")
    x = np.asarray(x, dtype=float).reshape(-1)
    st = as_stream(stream, "tail_report")
    draws = draws or rde_sample(model, samples, stream=st.child("draws"))
    y = draws.R @ x
    N = y.size
    pos = np.sort(y[y > 0])[::-1]
    if pos.size < 100:
        raise InsufficientTailData(f"only {pos.size} positive projections")
    k_lo, k_hi = math.sqrt(N), min(N / 10, pos.size - 1)
    ks = np.unique(np.geomspace(k_lo, k_hi, n_k).astype(np.int64))
    trace = hill_trace(pos, ks)
    i = plateau(trace, window)
    k_star = int(ks[i])
    alpha_hat = float(trace[i])
    boot = _bootstrap_hill(pos, k_star, st.child("bootstrap").generator(0), BOOTSTRAP_RESAMPLES)
    ci = (float(np.quantile(boot, 0.025)), float(np.quantile(boot, 0.975)))

    if with_theory:
        alpha_th, e_x = theory_values(model, x, grid)
    else:
        alpha_th, e_x = math.nan, math.nan
    t = np.geomspace(np.quantile(pos, 0.5), pos[min(pos.size - 1, 99)], n_t)
    asc = pos[::-1]
    ccdf = (asc.size - np.searchsorted(asc, t, side="right")) / N
    scale = alpha_th if math.isfinite(alpha_th) else alpha_hat
    return TailReport(
        x=x, t=t, ccdf=ccdf, t_alpha_ccdf=t**scale * ccdf, k_grid=ks, hill_trace=trace, k_star=k_star,
        alpha_hat=alpha_hat, ci=ci, alpha_theory=alpha_th, e_alpha_at_x=e_x, samples=N,
        positive=int(pos.size), max_depth=draws.max_depth,
    )


# ---------------------------------------------------------------------------
# moment conditions


@dataclass
class KestenCondition:
    satisfied: bool
    witness: Optional[float]
    s_grid: np.ndarray
    log_moment: np.ndarray
    log_bound: np.ndarray

    def __iter__(self):
        return iter((self.satisfied, self.witness))


def kesten_condition(model: RdeModel, s_grid: Optional[Sequence[float]] = None) -> KestenCondition:
    """First ``s0`` on the grid with ``E[(min_i sum_j M_ij)^s0] >= d^(s0/2)``.

    The expectation is an exact sum over atoms or the law's quadrature rule.
    """
    if model.ensemble.cone != NONNEGATIVE:
        raise ValueError("the min-row-sum condition is stated for nonnegative models")
    s = np.linspace(0.1, 50.0, 500) if s_grid is None else np.asarray(s_grid, dtype=float)
    mats, w = model.ensemble.quadrature()
    m = mats.sum(axis=2).min(axis=1)
    keep = (m > 0) & (w > 0)
    with np.errstate(divide="ignore"):
        lm = special.logsumexp(np.outer(s, np.log(m[keep])) + np.log(w[keep]), axis=1) if keep.any() else np.full(s.size, -np.inf)
    lb = 0.5 * s * math.log(model.dim)
    ok = lm >= lb
    witness = float(s[np.argmax(ok)]) if ok.any() else None
    return KestenCondition(bool(ok.any()), witness, s, lm, lb)


def _shift_moment(model: RdeModel, s: float, rng) -> float:
    ens = model.ensemble
    norm = ens.norm
    if ens.shift is not None:
        return float(vnorm(ens.shift.vector[None, :], norm)[0] ** s)
    if ens.is_finite:
        return float(np.sum(ens.law.probs * vnorm(ens.law.shifts, norm) ** s))
    _, _, B = ens.draw(rng, 100_000)
    return float(np.mean(vnorm(B, norm) ** s))


def _product_moments(model: RdeModel, s: float, m_max: int, stream) -> List[float]:
    ens = model.ensemble
    out = [1.0]
    for m in range(1, m_max + 1):
        if ens.is_finite:
            try:
                out.append(enum_moment(ens, s, m, max_terms=10**5))
                continue
            except BudgetExceeded:
                break
        if ens.dim == 1 and ens.law.has("log_moment"):
            out.append(math.exp(m * ens.law.log_moment(s)))
        else:
            out.append(mc_moment(ens, s, m, 100_000, stream.child(f"m{m}")).estimate)
    return out


def moment_bound_scan(
    model: RdeModel,
    s_grid: Sequence[float],
    m_max: int = 6,
    draws: Optional[RdeSample] = None,
    stream=0,
) -> List[dict]:
    """Upper bounds on ``(E|R|^s)^(1/s)`` from the backward series.

    With ``a_m = E||Pi_m||^s`` and submultiplicativity,
    ``sum_n (E||Pi_n||^s)^(1/s) <= (sum_{r<m} a_r^(1/s)) / (1 - a_m^(1/s))``
    whenever ``a_m < 1``; for ``s < 1`` the subadditive analogue on
    ``E|R|^s`` is used.  The smallest bound over ``m <= m_max`` is reported,
    infinity when no ``a_m`` is below one.  When ``draws`` are given the
    empirical moment and its value on the first half of the draws are added.
    """
    st = as_stream(stream, "moment_bound_scan")
    rows = []
    for s in s_grid:
        s = float(s)
        if s <= 0:
            raise ValueError("moment orders must be positive")
        a = _product_moments(model, s, m_max, st.child(f"s{s:g}"))
        bmom = _shift_moment(model, s, st.child("shift").generator(0))
        p = 1.0 / s if s >= 1 else 1.0
        best, best_m = math.inf, None
        for m in range(1, len(a)):
            if a[m] < 1:
                head = sum(a[r] ** p for r in range(m))
                val = head / (1 - a[m] ** p) * bmom**p
                bound = val if s >= 1 else val ** (1 / s)
                if bound < best:
                    best, best_m = bound, m
        row = {"s": s, "block": best_m or 0, "bound": best, "finite": math.isfinite(best)}
        if draws is not None:
            r = vnorm(draws.R, model.ensemble.norm) ** s
            row["empirical"] = float(np.mean(r) ** (1 / s))
            row["empirical_half"] = float(np.mean(r[: r.size // 2]) ** (1 / s))
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# fixed-point law


@dataclass
class FixedPointTest:
    p_values: List[float]
    directions: np.ndarray
    statistic: List[float]

    @property
    def min_p(self) -> float:
        return min(self.p_values)

    def passed(self, level: float = 0.01) -> bool:
        return self.min_p > level


def _directions(dim: int) -> np.ndarray:
    if dim == 1:
        return np.ones((1, 1))
    mean = np.full(dim, 1.0 / dim)
    return np.stack([np.eye(dim)[0], np.eye(dim)[-1], mean])


def fixed_point_test(model: RdeModel, samples: int = 100_000, stream=0) -> FixedPointTest:
    """Two-sample KS of ``R`` against ``M R' + B`` along a few directions."""
    st = as_stream(stream, "fixed_point")
    R = rde_sample(model, samples, stream=st.child("R")).R
    R2 = rde_sample(model, samples, stream=st.child("R2")).R
    _, M, B = model.ensemble.draw(st.child("MB").generator(0), samples)
    rhs = np.einsum("nij,nj->ni", M, R2) + B
    dirs = _directions(model.dim)
    pv, stat = [], []
    for v in dirs:
        res = stats.ks_2samp(R @ v, rhs @ v)
        pv.append(float(res.pvalue))
        stat.append(float(res.statistic))
    return FixedPointTest(pv, dirs, stat)
