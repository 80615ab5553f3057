"""Paths of the log-norm walk under the shifted (tilted) measure.

Under the tilt ``s`` a step from ``x`` picks the matrix ``a`` with density

    |a x|^s e_s(a . x) / (k(s) e_s(x))

relative to the original law.  For finitely supported laws this density is
sampled exactly (renormalizing the small discretization residual of the
interpolated ``e_s``); scalar families that are closed under tilting are
sampled from the tilted family; other parametric laws are sampled untilted
and carry the log of the density as an importance weight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy import sparse

from ._rng import as_stream
from .ensemble import LdmatrixError, MatrixEnsemble, act
from .grid import SphereGrid
from .spectral import SpectralProfile, transfer_matrix

RESIDUAL_ERROR = 0.1
RESIDUAL_FLAG = 1e-3

EXACT_FINITE = "exact_finite"
EXACT_SCALAR = "exact_scalar"
WEIGHTED = "weighted"
UNTILTED = "untilted"


class GridTooCoarse(LdmatrixError, RuntimeError):
    pass


class SpectralGapFailure(LdmatrixError, RuntimeError):
    pass


def sampling_mode(ensemble: MatrixEnsemble, profile: Optional[SpectralProfile]) -> str:
    if profile is None:
        return UNTILTED
    if ensemble.is_finite:
        return EXACT_FINITE
    if ensemble.dim == 1 and ensemble.law.has("tilted"):
        return EXACT_SCALAR
    return WEIGHTED


@dataclass
class TiltedPath:
    """One trajectory ``(X_k, S_k)``, ``k = 0..n``.

    ``indices`` holds atom indices for finite laws (replayable) and is None
    otherwise.  ``weight_log`` is 0 for exactly tilted paths.
    """

    x0: np.ndarray
    X: np.ndarray
    S: np.ndarray
    norm_residuals: np.ndarray
    weight_log: float = 0.0
    indices: Optional[np.ndarray] = None
    residual_bound: float = RESIDUAL_FLAG

    @property
    def flagged(self) -> bool:
        return bool(np.any(self.norm_residuals > self.residual_bound))

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.S)


@dataclass
class PathBatch:
    """Many paths at once; trajectories only when ``record=True``."""

    s: float
    n: int
    S_n: np.ndarray
    X_n: np.ndarray
    log_weight: np.ndarray
    max_residual: float
    mode: str
    S_path: Optional[np.ndarray] = None
    X_path: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None

    @property
    def paths(self) -> int:
        return self.S_n.shape[0]


class _Stepper:
    """Vectorized one-step kernel shared by all path samplers."""

    def __init__(self, ensemble: MatrixEnsemble, profile: Optional[SpectralProfile]):
        if profile is not None and profile.transpose:
            ensemble = ensemble.transposed()
        self.ensemble = ensemble
        self.profile = profile
        self.mode = sampling_mode(ensemble, profile)
        self.s = 0.0 if profile is None else profile.s
        if profile is not None:
            self.grid = profile.grid
            self.log_e = np.log(profile.e_s)
            self.log_k = profile.log_k
            self.norm, self.cone = profile.grid.norm, profile.grid.cone
        else:
            self.norm, self.cone = ensemble.norm, ensemble.cone
        if self.mode == EXACT_SCALAR:
            self.tilted_law = ensemble.law.tilted(self.s)

    def _log_e(self, y):
        return np.log(self.grid.interpolate(self.profile.e_s, y))

    def step(self, rng: np.random.Generator, X: np.ndarray):
        """Advance states ``X``; returns ``(index, X1, increment, log_weight, residual)``."""
        size = X.shape[0]
        if self.mode == EXACT_FINITE:
            law = self.ensemble.law
            Y, L = act(law.matrices[:, None], X[None], self.norm, self.cone)
            logw = np.log(law.probs)[:, None] + self.s * L + self._log_e(Y) - self.log_k - self._log_e(X)[None]
            w = np.exp(logw)
            tot = w.sum(axis=0)
            residual = np.abs(1.0 - tot)
            cdf = np.cumsum(w / tot, axis=0)
            u = rng.random(size)
            idx = np.minimum((u[None] > cdf).sum(axis=0), law.size - 1)
            cols = np.arange(size)
            return idx, Y[idx, cols], L[idx, cols], np.zeros(size), residual
        if self.mode == UNTILTED:
            idx, mats, _ = self.ensemble.draw(rng, size)
            Y, L = act(mats, X, self.norm, self.cone)
            return idx, Y, L, np.zeros(size), np.zeros(size)
        if self.mode == EXACT_SCALAR:
            a = self.tilted_law.draw(rng, size)[0][:, 0, 0]
            return None, X, np.log(a), np.zeros(size), np.zeros(size)
        _, mats, _ = self.ensemble.draw(rng, size)
        Y, L = act(mats, X, self.norm, self.cone)
        logw = self.s * L + self._log_e(Y) - self.log_k - self._log_e(X)
        return None, Y, L, logw, np.zeros(size)


def _check_residual(res):
    worst = float(np.max(res)) if res.size else 0.0
    if worst > RESIDUAL_ERROR:
        raise GridTooCoarse(f"tilted kernel mass off by {worst:.3g} (> {RESIDUAL_ERROR}); refine the grid")
    return worst


def tilted_step(x: np.ndarray, profile: SpectralProfile, stream, ensemble: Optional[MatrixEnsemble] = None):
    """One step of the tilted chain from ``x``.

    Returns ``(index, x1, increment, residual)``; ``residual`` is
    ``|1 - sum of unnormalized tilted probabilities|``.
    """
    ensemble = ensemble or profile.ensemble
    if not ensemble.is_finite and sampling_mode(ensemble, profile) != EXACT_SCALAR:
        raise ValueError("tilted_step needs a finite law (use weighted_step for parametric laws)")
    rng = stream if isinstance(stream, np.random.Generator) else as_stream(stream, "tilted_step").generator(0)
    stepper = _Stepper(ensemble, profile)
    idx, Y, L, _, res = stepper.step(rng, np.atleast_2d(np.asarray(x, dtype=float)))
    _check_residual(res)
    return (None if idx is None else int(idx[0])), Y[0], float(L[0]), float(res[0])


def tilted_probabilities(x: np.ndarray, profile: SpectralProfile):
    """Normalized tilted atom probabilities at ``x`` and the residual."""
    law = profile.ensemble.law
    g = profile.grid
    Y, L = act(law.matrices, np.asarray(x, dtype=float)[None], g.norm, g.cone)
    w = law.probs * np.exp(profile.s * L) * g.interpolate(profile.e_s, Y) / (profile.k * profile.e_at(x))
    return w / w.sum(), abs(1.0 - w.sum())


def weighted_step(x: np.ndarray, profile: SpectralProfile, stream, ensemble: Optional[MatrixEnsemble] = None):
    """Untilted draw from the law plus the log tilt density as a weight.

    Returns ``(matrix, x1, increment, log_weight)``.
    """
    ensemble = ensemble or profile.ensemble
    rng = stream if isinstance(stream, np.random.Generator) else as_stream(stream, "weighted_step").generator(0)
    _, mats, _ = ensemble.draw(rng, 1)
    g = profile.grid
    x = np.asarray(x, dtype=float)
    Y, L = act(mats[0], x, g.norm, g.cone)
    logw = profile.s * L + math.log(profile.e_at(Y)) - profile.log_k - math.log(profile.e_at(x))
    return mats[0], Y, float(L), float(logw)


def tilted_path(x0: np.ndarray, n: int, profile: SpectralProfile, stream, ensemble: Optional[MatrixEnsemble] = None) -> TiltedPath:
    """A single path of length ``n`` under the tilted measure started at ``x0``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ensemble = ensemble or profile.ensemble
    rng = stream if isinstance(stream, np.random.Generator) else as_stream(stream, "tilted_path").generator(0)
    stepper = _Stepper(ensemble, profile)
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    X = [x[0]]
    S = [0.0]
    res, idxs = [], []
    wlog = 0.0
    for _ in range(n):
        idx, x, L, lw, r = stepper.step(rng, x)
        _check_residual(r)
        X.append(x[0])
        S.append(S[-1] + float(L[0]))
        res.append(float(r[0]))
        wlog += float(lw[0])
        if idx is not None:
            idxs.append(int(idx[0]))
    return TiltedPath(
        x0=np.asarray(x0, dtype=float), X=np.array(X), S=np.array(S), norm_residuals=np.array(res),
        weight_log=wlog, indices=np.array(idxs) if idxs else None,
    )


def _start_states(x0, profile, rng, size, dim, start, stop):
    if isinstance(x0, str):
        if x0 != "stationary":
            raise ValueError(f"unknown start {x0!r}")
        nodes = rng.choice(profile.grid.size, size=size, p=profile.pi_s)
        return profile.grid.nodes[nodes]
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        return np.broadcast_to(x0, (size, dim)).copy()
    return x0[start:stop].copy()


def simulate(
    ensemble: MatrixEnsemble,
    profile: Optional[SpectralProfile],
    x0: Union[np.ndarray, str],
    n: int,
    paths: int,
    stream,
    record: bool = False,
    op_id: str = "simulate",
) -> PathBatch:
    """Simulate ``paths`` independent paths of length ``n``.

    ``profile=None`` gives the untilted chain.  ``x0`` is a unit vector, an
    array with one start per path, or ``"stationary"`` (starts drawn from
    the grid weights of ``pi_s``).
    """
    st = as_stream(stream, op_id)
    stepper = _Stepper(ensemble, profile)
    dim = ensemble.dim

    def block(rng, start, stop):
        size = stop - start
        X = _start_states(x0, profile, rng, size, dim, start, stop)
        S = np.zeros(size)
        W = np.zeros(size)
        worst = 0.0
        Sp = [S.copy()] if record else None
        Xp = [X.copy()] if record else None
        for _ in range(n):
            _, X, L, lw, r = stepper.step(rng, X)
            worst = max(worst, _check_residual(r))
            S = S + L
            W += lw
            if record:
                Sp.append(S.copy())
                Xp.append(X.copy())
        out = (S, X, W, worst)
        if record:
            out += (np.stack(Sp, axis=1), np.stack(Xp, axis=1))
        return out

    parts = st.map_blocks(block, paths)
    batch = PathBatch(
        s=stepper.s,
        n=n,
        S_n=np.concatenate([p[0] for p in parts]),
        X_n=np.concatenate([p[1] for p in parts]),
        log_weight=np.concatenate([p[2] for p in parts]),
        max_residual=max(p[3] for p in parts),
        mode=stepper.mode,
    )
    if record:
        batch.S_path = np.concatenate([p[4] for p in parts])
        batch.X_path = np.concatenate([p[5] for p in parts])
    if not isinstance(x0, str):
        batch.x0 = np.asarray(x0, dtype=float)
    return batch


def path_table(batch: PathBatch, grid: Optional[SphereGrid] = None) -> List[dict]:
    """Rows ``(path_id, k, S_k, node)`` of a recorded batch."""
    if batch.S_path is None:
        raise ValueError("batch was simulated without record=True")
    rows = []
    nodes = grid.nearest(batch.X_path) if grid is not None else None
    for i in range(batch.paths):
        for k in range(batch.n + 1):
            rows.append({"path_id": i, "k": k, "S_k": batch.S_path[i, k], "node": -1 if nodes is None else int(nodes[i, k])})
    return rows


# ---------------------------------------------------------------------------
# tilted transition operator and the bias function


def _step_table(profile: SpectralProfile):
    """Per-atom tilted weights and increments at the grid nodes."""
    ens, g = profile.ensemble, profile.grid
    mats, probs = ens.quadrature()
    if profile.transpose:
        mats = np.swapaxes(mats, 1, 2)
    Y, L = act(mats[:, None], g.nodes[None], g.norm, g.cone)
    w = probs[:, None] * np.exp(profile.s * L) * g.interpolate(profile.e_s, Y) / (profile.k * profile.e_s[None])
    return Y, L, w


def tilted_transition(profile: SpectralProfile) -> sparse.csr_matrix:
    """Row-stochastic matrix of the tilted chain restricted to the grid."""
    g = profile.grid
    P = transfer_matrix(profile.ensemble, profile.s, g, profile.transpose)
    Q = sparse.diags(1.0 / (profile.k * profile.e_s)) @ P @ sparse.diags(profile.e_s)
    rows = np.asarray(Q.sum(axis=1)).ravel()
    return (sparse.diags(1.0 / rows) @ Q).tocsr()


def stationary_weights(Q: sparse.csr_matrix, start: np.ndarray, tol: float = 1e-15, max_iter: int = 100000) -> np.ndarray:
    QT = Q.T.tocsr()
    v = np.asarray(start, dtype=float).copy()
    for _ in range(max_iter):
        w = QT @ v
        w /= w.sum()
        if np.max(np.abs(w - v)) < tol:
            return w
        v = w
    raise SpectralGapFailure("stationary iteration of the tilted chain did not settle")


def mean_increment(profile: SpectralProfile) -> np.ndarray:
    """``E_{Q_x}[S_1]`` at each grid node (tilted weights renormalized)."""
    _, L, w = _step_table(profile)
    return np.sum(w * L, axis=0) / np.sum(w, axis=0)


def stationary_drift(profile: SpectralProfile) -> float:
    """Drift of the grid chain under its own stationary law."""
    Q = tilted_transition(profile)
    pi = stationary_weights(Q, profile.pi_s)
    return float(pi @ mean_increment(profile))


@dataclass
class BiasFunction:
    """Centered solution of ``b = h + Q b`` on the grid nodes.

    ``h(x) = E_{Q_x}[S_1] - q``.  ``drift_gap`` is the stationary mean of
    ``h`` before centering (the discrepancy between the grid chain's drift
    and ``q``).
    """

    values: np.ndarray
    grid: SphereGrid = field(repr=False)
    series_depth: int
    truncation_residual: float
    recursion_residual: float
    drift_gap: float
    pi: np.ndarray = field(repr=False)

    def at(self, x: np.ndarray) -> np.ndarray:
        return self.grid.interpolate(self.values, np.asarray(x, dtype=float))

    def to_dict(self) -> dict:
        return {
            "series_depth": self.series_depth,
            "truncation_residual": self.truncation_residual,
            "recursion_residual": self.recursion_residual,
            "drift_gap": self.drift_gap,
            "nodes": self.grid.nodes.tolist(),
            "b": self.values.tolist(),
        }


def bias_function(profile: SpectralProfile, ensemble=None, grid=None, depth: int = 100000, tol: float = 1e-9) -> BiasFunction:
    """Bias function by the Neumann series ``b = sum_k Q^k h_c``.

    ``h_c`` is ``h`` centered against the stationary law of the grid chain,
    so the series converges geometrically when the chain has a spectral gap.
    Summation stops once the added term has sup norm below ``tol``.
    """
    if ensemble is not None and ensemble is not profile.ensemble:
        raise ValueError("ensemble differs from the one the profile was computed for")
    if grid is not None and grid is not profile.grid:
        raise ValueError("grid differs from the profile's grid")
    g = profile.grid
    if g.size == 1:
        return BiasFunction(np.zeros(1), g, 0, 0.0, 0.0, float(mean_increment(profile)[0] - profile.q), np.ones(1))
    Q = tilted_transition(profile)
    pi = stationary_weights(Q, profile.pi_s)
    h = mean_increment(profile) - profile.q
    gap = float(pi @ h)
    term = h - gap
    b = np.zeros_like(h)
    last = math.inf
    for it in range(1, depth + 1):
        b += term
        term = Q @ term
        last = float(np.max(np.abs(term)))
        if last < tol:
            b += term
            break
    else:
        raise SpectralGapFailure(f"bias series terms did not decay below {tol} in {depth} steps (last {last:.3e})")
    b -= pi @ b
    rec = float(np.max(np.abs(b - (h - gap) - Q @ b)))
    return BiasFunction(b, g, it, last, rec, gap, pi)


@dataclass
class CumulantEstimate:
    sigma2: float
    sigma2_se: float
    m3: float
    m3_se: float
    n: int
    paths: int


def cumulant_estimates(profile: SpectralProfile, n: int, paths: int, stream, ensemble=None) -> CumulantEstimate:
    """``(1/n)`` times the second and third central moments of ``S_n``.

    Paths start from the stationary grid weights ``pi_s``.
    """
    ensemble = ensemble or profile.ensemble
    batch = simulate(ensemble, profile, "stationary", n, paths, stream, op_id="cumulants")
    if batch.mode == WEIGHTED:
        raise ValueError("cumulant estimates need exactly tilted paths")
    S = batch.S_n - batch.S_n[0]
    dev = S - S.mean()
    d2, d3 = dev**2, dev**3
    root = math.sqrt(paths)
    return CumulantEstimate(
        sigma2=float(d2.mean() / n),
        sigma2_se=float(d2.std(ddof=1) / root / n),
        m3=float(d3.mean() / n),
        m3_se=float(d3.std(ddof=1) / root / n),
        n=n,
        paths=paths,
    )
