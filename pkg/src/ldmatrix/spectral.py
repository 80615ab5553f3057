"""Dominant eigen-data of the transfer operator and the cumulant function.

For a tilt ``s`` the transfer operator acts on functions of the sphere by

    (P_s f)(x) = E[ |A x|^s f(A . x) ].

Its spectral radius is ``k(s)``, with strictly positive eigenfunction ``e_s``
and eigen-probability ``nu_s``.  Here ``P_s`` is discretized on a
:class:`~ldmatrix.grid.SphereGrid` (images ``A . x`` are interpolated between
nodes) and its dominant pair is found by power iteration.  ``Lambda(s) =
log k(s)`` is convex; its derivatives give the drift, variance and third
cumulant of the log-norm walk under the tilted measure.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, sparse

from ._rng import as_stream
from .ensemble import LdmatrixError, MatrixEnsemble, act, opnorm
from .grid import ARC, SphereGrid, build_grid

log = logging.getLogger(__name__)

DEFAULT_FD_STEP = 5e-3


class ConvergenceError(LdmatrixError, RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class NoRootInBracket(LdmatrixError, ValueError):
    pass


class DriftUnattainable(LdmatrixError, ValueError):
    pass


class DomainError(LdmatrixError, ValueError):
    """A tilt (or a finite-difference stencil around it) leaves the moment domain."""


class BudgetExceeded(LdmatrixError, ValueError):
    pass


@dataclass
class SpectralProfile:
    """Spectral data at one tilt ``s``.

    ``e_s`` is normalized to sup 1, ``nu_s`` and ``pi_s`` are probability
    vectors on the grid nodes.  ``q``, ``sigma2`` and ``m3`` are the first
    three derivatives of ``Lambda`` (NaN until filled by
    :func:`cgf_profile`).
    """

    s: float
    k: float
    e_s: np.ndarray
    nu_s: np.ndarray
    grid: SphereGrid = field(repr=False)
    ensemble: MatrixEnsemble = field(repr=False)
    eigen_residual: float = 0.0
    interp_residual: float = 0.0
    iterations: int = 0
    transpose: bool = False
    q: float = math.nan
    sigma2: float = math.nan
    m3: float = math.nan
    fd_step: float = math.nan
    fd_check: Dict[str, float] = field(default_factory=dict)

    @property
    def log_k(self) -> float:
        return math.log(self.k)

    @property
    def pi_s(self) -> np.ndarray:
        w = self.e_s * self.nu_s
        return w / w.sum()

    @property
    def norm(self) -> str:
        return self.grid.norm

    def e_at(self, x: np.ndarray) -> np.ndarray:
        """Eigenfunction interpolated at unit vector(s) ``x``."""
        return self.grid.interpolate(self.e_s, np.asarray(x, dtype=float))

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "k": self.k,
            "log_k": self.log_k,
            "q": self.q,
            "sigma2": self.sigma2,
            "m3": self.m3,
            "fd_step": self.fd_step,
            "fd_check": dict(self.fd_check),
            "eigen_residual": self.eigen_residual,
            "interp_residual": self.interp_residual,
            "iterations": self.iterations,
            "transpose": self.transpose,
            "norm": self.grid.norm,
            "cone": self.grid.cone,
            "nodes": self.grid.nodes.tolist(),
            "e_s": self.e_s.tolist(),
            "nu_s": self.nu_s.tolist(),
            "pi_s": self.pi_s.tolist(),
        }


@dataclass
class RateFunctionPoint:
    q: float
    s: float
    lambda_star: float


# ---------------------------------------------------------------------------
# transfer operator


def _check_domain(ensemble: MatrixEnsemble, s: float):
    lo, hi = ensemble.s_domain
    if not lo < s < hi:
        raise DomainError(f"s = {s} outside the moment domain ({lo}, {hi})")


def _closed_form(ensemble: MatrixEnsemble) -> bool:
    return ensemble.dim == 1 and not ensemble.is_finite and ensemble.law.has("log_moment")


def transfer_matrix(ensemble: MatrixEnsemble, s: float, grid: SphereGrid, transpose: bool = False, order: Optional[int] = None):
    """Sparse matrix of the discretized ``P_s`` (or ``P_s*`` with ``transpose``)."""
    _check_domain(ensemble, s)
    n = grid.size
    if _closed_form(ensemble):
        return sparse.csr_matrix(np.array([[math.exp(ensemble.law.log_moment(s))]]))
    mats, probs = ensemble.quadrature(order)
    if transpose:
        mats = np.swapaxes(mats, 1, 2)
    images, incr = act(mats[:, None], grid.nodes[None], grid.norm, grid.cone)
    coef = probs[:, None] * np.exp(s * incr)
    idx, w = grid.locate(images)
    rows = np.broadcast_to(np.arange(n)[None, :, None], idx.shape)
    data = coef[..., None] * w
    return sparse.csr_matrix((data.ravel(), (rows.ravel(), idx.ravel())), shape=(n, n))


def apply_transfer(ensemble: MatrixEnsemble, s: float, grid: SphereGrid, f: np.ndarray, transpose: bool = False) -> np.ndarray:
    """``(P_s f)`` at the grid nodes, ``f`` given by its node values."""
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("f must be finite at every node")
    return transfer_matrix(ensemble, s, grid, transpose) @ f


def continuous_residual(ensemble: MatrixEnsemble, s: float, grid: SphereGrid, e: np.ndarray, k: float, points: np.ndarray, transpose: bool = False) -> float:
    """``sup |P_s e~ - k e~|`` at off-grid ``points`` (``e~`` interpolates ``e``)."""
    if grid.size == 1:
        return 0.0
    mats, probs = ensemble.quadrature()
    if transpose:
        mats = np.swapaxes(mats, 1, 2)
    images, incr = act(mats[:, None], points[None], grid.norm, grid.cone)
    pe = np.sum(probs[:, None] * np.exp(s * incr) * grid.interpolate(e, images), axis=0)
    return float(np.max(np.abs(pe - k * grid.interpolate(e, points))))


def _midpoints(grid: SphereGrid) -> np.ndarray:
    if grid.kind == ARC:
        mid = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
        return mid
    return grid.nodes


def dominant_pair(
    ensemble: MatrixEnsemble,
    s: float,
    grid: Optional[SphereGrid] = None,
    max_iter: int = 20000,
    tol: float = 1e-13,
    transpose: bool = False,
    e0: Optional[np.ndarray] = None,
    with_adjoint: bool = True,
) -> SpectralProfile:
    """Power iteration for ``k(s)``, ``e_s`` and ``nu_s``.

    Iterates ``f <- P f / max(P f)`` until successive iterates differ by
    less than ``tol`` in sup norm; the final normalizer is ``k``.  The
    adjoint iteration ``v <- v P / sum(v P)`` yields ``nu_s``.

    Raises
    ------
    ConvergenceError
        If either iteration has not settled after ``max_iter`` steps.
    """
    grid = grid or build_grid(ensemble)
    P = transfer_matrix(ensemble, s, grid, transpose)
    f = np.ones(grid.size) if e0 is None else np.asarray(e0, dtype=float).copy()
    f /= f.max()
    k = math.nan
    step = math.inf
    for it in range(1, max_iter + 1):
        g = P @ f
        k = float(g.max())
        if not k > 0:
            raise ConvergenceError(f"transfer operator annihilated the iterate at s={s}")
        g /= k
        step = float(np.max(np.abs(g - f)))
        f = g
        if step < tol:
            break
    else:
        raise ConvergenceError(f"power iteration did not converge at s={s} (last step {step:.3e})", step)
    if np.any(f <= 0):
        raise ConvergenceError(f"eigenfunction not strictly positive at s={s}", step)

    if with_adjoint:
        PT = P.T.tocsr()
        v = grid.weights.copy()
        for _ in range(max_iter):
            w = PT @ v
            w /= w.sum()
            vstep = float(np.max(np.abs(w - v)))
            v = w
            if vstep < tol * 1e-1 or vstep < 1e-16:
                break
        else:
            raise ConvergenceError(f"adjoint iteration did not converge at s={s}", vstep)
    else:
        v = np.full(grid.size, math.nan)

    residual = float(np.max(np.abs(P @ f - k * f)))
    interp = continuous_residual(ensemble, s, grid, f, k, _midpoints(grid), transpose) if grid.kind == ARC else residual
    return SpectralProfile(
        s=float(s), k=k, e_s=f, nu_s=v, grid=grid, ensemble=ensemble,
        eigen_residual=residual, interp_residual=interp, iterations=it, transpose=transpose,
    )


def log_k(ensemble: MatrixEnsemble, s: float, grid: Optional[SphereGrid] = None, transpose: bool = False, e0=None) -> float:
    """``Lambda(s) = log k(s)`` (closed form when the scalar law provides one)."""
    if _closed_form(ensemble):
        _check_domain(ensemble, s)
        return float(ensemble.law.log_moment(s))
    return dominant_pair(ensemble, s, grid, transpose=transpose, e0=e0, with_adjoint=False).log_k


# ---------------------------------------------------------------------------
# derivatives of Lambda


def _stencil(fun, s: float, h: float) -> Tuple[float, float, float]:
    f2m, f1m, f0, f1p, f2p = (fun(s + j * h) for j in (-2, -1, 0, 1, 2))
    d1 = (f2m - 8 * f1m + 8 * f1p - f2p) / (12 * h)
    d2 = (-f2m + 16 * f1m - 30 * f0 + 16 * f1p - f2p) / (12 * h * h)
    d3 = (-f2m + 2 * f1m - 2 * f1p + f2p) / (2 * h**3)
    return d1, d2, d3


def _lambda_fun(ensemble, grid, transpose=False):
    cache = {}
    state = {"e": None}

    def fun(s):
        key = round(s, 15)
        if key not in cache:
            if _closed_form(ensemble):
                _check_domain(ensemble, s)
                cache[key] = float(ensemble.law.log_moment(s))
            else:
                p = dominant_pair(ensemble, s, grid, transpose=transpose, e0=state["e"], with_adjoint=False)
                state["e"] = p.e_s
                cache[key] = p.log_k
        return cache[key]

    return fun


def lambda_derivatives(ensemble, s, grid=None, fd_step=DEFAULT_FD_STEP, transpose=False, fun=None):
    """Five-point central differences ``(Lambda', Lambda'', Lambda''')`` at ``s``."""
    grid = grid or build_grid(ensemble)
    lo, hi = ensemble.s_domain
    if not (lo < s - 2 * fd_step and s + 2 * fd_step < hi):
        raise DomainError(f"finite-difference stencil around s={s} leaves the domain ({lo}, {hi})")
    fun = fun or _lambda_fun(ensemble, grid, transpose)
    return _stencil(fun, s, fd_step)


def cgf_profile(
    ensemble: MatrixEnsemble,
    grid: Optional[SphereGrid] = None,
    s_values: Sequence[float] = (1.0,),
    fd_step: float = DEFAULT_FD_STEP,
    transpose: bool = False,
    richardson: bool = True,
) -> List[SpectralProfile]:
    """Spectral profiles with ``q = Lambda'``, ``sigma2 = Lambda''``, ``m3 = Lambda'''``.

    Derivatives come from the five-point stencil with step ``fd_step``; with
    ``richardson`` the stencil is repeated at ``fd_step/2`` and the absolute
    differences are stored in ``fd_check``.
    """
    grid = grid or build_grid(ensemble)
    fun = _lambda_fun(ensemble, grid, transpose)
    out = []
    for s in s_values:
        s = float(s)
        d1, d2, d3 = lambda_derivatives(ensemble, s, grid, fd_step, transpose, fun)
        prof = dominant_pair(ensemble, s, grid, transpose=transpose)
        prof.q, prof.sigma2, prof.m3, prof.fd_step = d1, d2, d3, fd_step
        if richardson:
            e1, e2, e3_ = _stencil(fun, s, fd_step / 2)
            prof.fd_check = {"q": abs(e1 - d1), "sigma2": abs(e2 - d2), "m3": abs(e3_ - d3)}
        if prof.sigma2 < -1e-8:
            log.warning("Lambda'' = %.3e < 0 at s=%g: convexity violated on this grid", prof.sigma2, s)
        out.append(prof)
    return out


def profile_at(ensemble, s, grid=None, fd_step=DEFAULT_FD_STEP, transpose=False) -> SpectralProfile:
    return cgf_profile(ensemble, grid, [s], fd_step, transpose)[0]


def profile_table(profiles: Sequence[SpectralProfile]) -> List[dict]:
    """Rows ``(s, k, Lambda, Lambda', Lambda'', Lambda''', residual, fd_step)``."""
    return [
        {
            "s": p.s,
            "k": p.k,
            "Lambda": p.log_k,
            "dLambda": p.q,
            "d2Lambda": p.sigma2,
            "d3Lambda": p.m3,
            "eigen_residual": p.eigen_residual,
            "fd_step": p.fd_step,
        }
        for p in profiles
    ]


# ---------------------------------------------------------------------------
# root and Legendre transform


def _default_upper(ensemble, cap=50.0):
    lo, hi = ensemble.s_domain
    return min(cap, hi - 1e-6) if math.isfinite(hi) else cap


def solve_alpha(ensemble: MatrixEnsemble, grid: Optional[SphereGrid] = None, bracket: Optional[Tuple[float, float]] = None, transpose: bool = False) -> float:
    """Positive root ``alpha`` of ``k(alpha) = 1``.

    ``Lambda`` is convex with ``Lambda(0) = 0``; the minimizer on the bracket
    is located first, then the sign change to its right is solved by a
    bracketing root finder.

    Raises
    ------
    NoRootInBracket
        If ``Lambda`` takes no negative value on the bracket or is not
        positive at its right end.
    """
    grid = grid or build_grid(ensemble)
    lo, hi = bracket if bracket is not None else (0.0, _default_upper(ensemble))
    fun = _lambda_fun(ensemble, grid, transpose)
    lam_hi = fun(hi)
    res = optimize.minimize_scalar(fun, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    s_min, lam_min = float(res.x), float(res.fun)
    probe = lo + 1e-3 * (hi - lo)
    if fun(probe) < lam_min:
        s_min, lam_min = probe, fun(probe)
    if not lam_min < -1e-13:
        raise NoRootInBracket(f"Lambda has no negative values on [{lo}, {hi}] (min {lam_min:.3e})")
    if not lam_hi > 0:
        raise NoRootInBracket(f"Lambda({hi}) = {lam_hi:.3e} is not positive")
    alpha = optimize.brentq(fun, s_min, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(alpha)


def rate_function(
    ensemble: MatrixEnsemble,
    grid: Optional[SphereGrid],
    q: float,
    s_bounds: Optional[Tuple[float, float]] = None,
    fd_step: float = DEFAULT_FD_STEP,
    transpose: bool = False,
    edge_tol: float = 1e-9,
) -> RateFunctionPoint:
    """Legendre transform ``Lambda*(q) = s q - Lambda(s)`` with ``Lambda'(s) = q``.

    ``s`` is searched in ``s_bounds`` (default: the moment domain clipped to
    [-20, 20]).  A ``q`` within ``edge_tol`` of the drift at a bound returns
    that bound.
    """
    grid = grid or build_grid(ensemble)
    lo_d, hi_d = ensemble.s_domain
    if s_bounds is None:
        s_bounds = (max(-20.0, lo_d + 3 * fd_step + 1e-9), min(20.0, hi_d - 3 * fd_step - 1e-9))
    lo, hi = s_bounds
    fun = _lambda_fun(ensemble, grid, transpose)

    def drift(s):
        return _stencil(fun, s, fd_step)[0]

    d_lo, d_hi = drift(lo), drift(hi)
    if abs(q - d_hi) <= edge_tol:
        s = hi
    elif abs(q - d_lo) <= edge_tol:
        s = lo
    elif not d_lo < q < d_hi:
        raise DriftUnattainable(f"q = {q} outside attainable drift range [{d_lo}, {d_hi}]")
    else:
        s = optimize.brentq(lambda t: drift(t) - q, lo, hi, xtol=1e-13, maxiter=500)
    lam_star = s * q - fun(s)
    return RateFunctionPoint(float(q), float(s), float(lam_star))


# ---------------------------------------------------------------------------
# moment oracles


def enum_moment(ensemble: MatrixEnsemble, s: float, n: int, max_terms: int = 10**7) -> float:
    """Exact ``E ||A_n ... A_1||^s`` by summing over all words of length ``n``."""
    if not ensemble.is_finite:
        raise ValueError("enum_moment needs a finitely supported law")
    law = ensemble.law
    m = law.size
    if m**n > max_terms:
        raise BudgetExceeded(f"{m}^{n} words exceed the budget of {max_terms}")
    if n == 0:
        return 1.0
    prods, probs = law.matrices.copy(), law.probs.copy()
    for _ in range(n - 2):
        prods = np.einsum("aij,bjk->abik", law.matrices, prods).reshape(-1, ensemble.dim, ensemble.dim)
        probs = np.outer(law.probs, probs).ravel()
    if n == 1:
        return float(np.sum(probs * opnorm(prods, ensemble.norm) ** s))
    total = 0.0
    for a, p in zip(law.matrices, law.probs):
        last = np.einsum("ij,bjk->bik", a, prods)
        total += p * float(np.sum(probs * opnorm(last, ensemble.norm) ** s))
    return total


def _log_norm_products(ensemble: MatrixEnsemble, n: int, rng: np.random.Generator, size: int) -> np.ndarray:
    d = ensemble.dim
    prod = np.broadcast_to(np.eye(d), (size, d, d)).copy()
    scale = np.zeros(size)
    for _ in range(n):
        _, mats, _ = ensemble.draw(rng, size)
        prod = np.einsum("nij,njk->nik", mats, prod)
        r = opnorm(prod, ensemble.norm)
        prod /= r[:, None, None]
        scale += np.log(r)
    return scale


@dataclass
class MCEstimate:
    estimate: float
    se: float
    paths: int

    def __iter__(self):
        return iter((self.estimate, self.se))


def mc_moment(ensemble: MatrixEnsemble, s: float, n: int, paths: int, stream) -> MCEstimate:
    """Monte Carlo ``E ||Pi_n||^s`` with standard error (log-domain accumulation)."""
    if paths < 100:
        raise ValueError("mc_moment needs at least 100 paths")
    st = as_stream(stream, "mc_moment")
    logs = np.concatenate(st.map_blocks(lambda rng, a, b: s * _log_norm_products(ensemble, n, rng, b - a), paths))
    top = logs.max()
    w = np.exp(logs - top)
    est = w.mean()
    se = w.std(ddof=1) / math.sqrt(paths) if paths > 1 else 0.0
    return MCEstimate(float(math.exp(top) * est), float(math.exp(top) * se), paths)


def lyapunov(ensemble: MatrixEnsemble, n: int, paths: int, stream) -> MCEstimate:
    """Top Lyapunov exponent: mean of ``(1/n) log ||Pi_n||`` over paths."""
    if n < 10:
        raise ValueError("lyapunov needs n >= 10")
    st = as_stream(stream, "lyapunov")
    vals = np.concatenate(st.map_blocks(lambda rng, a, b: _log_norm_products(ensemble, n, rng, b - a) / n, paths))
    se = vals.std(ddof=1) / math.sqrt(paths)
    return MCEstimate(float(vals.mean()), float(se), paths)
