"""Rare-event probabilities ``P(S_n >= n q)`` and their precise asymptotics.

The tilted estimator rests on the change-of-measure identity

    E_x[f(S_n) e_s(X_n)] = e_s(x) k(s)^n E_{Q_x^s}[f(S_n) exp(-s S_n)],

so paths are simulated under the tilt ``s`` solving ``Lambda'(s) = q`` and
the indicator is reweighted by ``exp(-s S_n)``.  All reweighting is done in
log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from .ensemble import LdmatrixError, MatrixEnsemble
from .spectral import SpectralProfile
from .tilt import WEIGHTED, BiasFunction, simulate

ESS_WARN_FRACTION = 0.01


class DegenerateVariance(LdmatrixError, ValueError):
    pass


def threshold_hits(S_n: np.ndarray, n: int, q: float) -> np.ndarray:
    """``S_n >= n q`` with a relative slack of 1e-9 for lattice thresholds."""
    if q == -math.inf:
        return np.ones(S_n.shape, dtype=bool)
    level = n * q
    return S_n >= level - 1e-9 * max(1.0, abs(level))


@dataclass
class NaiveTail:
    estimate: float
    se: float
    hits: int
    paths: int
    upper_bound: float

    def __iter__(self):
        return iter((self.estimate, self.se))


def naive_tail(x0, ensemble: MatrixEnsemble, n: int, q: float, paths: int, stream, confidence: float = 0.95) -> NaiveTail:
    """Fraction of untilted paths with ``S_n >= n q``.

    With zero hits the estimate is 0 and ``upper_bound`` is the one-sided
    Clopper-Pearson bound ``1 - (1 - confidence)^(1/paths)``.
    """
    if paths < 1000:
        raise ValueError("naive_tail needs at least 1000 paths")
    batch = simulate(ensemble, None, x0, n, paths, stream, op_id="naive_tail")
    hits = int(threshold_hits(batch.S_n, n, q).sum())
    p = hits / paths
    se = math.sqrt(p * (1 - p) / paths)
    if hits == 0:
        upper = 1.0 - (1.0 - confidence) ** (1.0 / paths)
    else:
        upper = float(stats.beta.ppf(confidence, hits + 1, paths - hits)) if hits < paths else 1.0
    return NaiveTail(p, se, hits, paths, upper)


def _log_mean(logs: np.ndarray, mask: np.ndarray):
    """Mean and SE of ``exp(logs) * mask``, returned with a common log scale."""
    n = logs.size
    if not np.any(mask):
        return 0.0, 0.0, -math.inf, 0.0
    top = float(np.max(logs[mask]))
    w = np.where(mask, np.exp(logs - top), 0.0)
    mean = w.mean()
    se = w.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    ess = float(w.sum() ** 2 / np.sum(w * w))
    return mean * math.exp(top), se * math.exp(top), top + math.log(mean), ess


@dataclass
class LdpEstimate:
    """Tilted estimates of ``E_x[e_s(X_n) 1{S_n >= nq}]`` and ``P_x(S_n >= nq)``."""

    x0: np.ndarray
    n: int
    q: float
    s: float
    tilted: tuple
    tilted_prob: tuple
    log_tilted: float
    log_tilted_prob: float
    prediction: float = math.nan
    ratio: float = math.nan
    naive: Optional[tuple] = None
    naive_upper: float = math.nan
    ess: float = math.nan
    low_ess: bool = False
    max_residual: float = 0.0
    mode: str = ""

    def row(self) -> dict:
        naive = self.naive or (math.nan, math.nan)
        return {
            "n": self.n,
            "q": self.q,
            "s": self.s,
            "naive": naive[0],
            "naive_SE": naive[1],
            "naive_upper": self.naive_upper,
            "tilted": self.tilted[0],
            "tilted_SE": self.tilted[1],
            "tilted_prob": self.tilted_prob[0],
            "tilted_prob_SE": self.tilted_prob[1],
            "prediction": self.prediction,
            "ratio": self.ratio,
        }


def br_prediction(x0, profile: SpectralProfile, n: int, q: Optional[float] = None) -> float:
    """Precise large-deviation value ``e_s(x) exp(-n Lambda*(q)) / (s sigma sqrt(2 pi n))``.

    ``Lambda*(q) = s q - Lambda(s)`` with the profile's tilt ``s``.
    """
    q = profile.q if q is None else q
    if not profile.sigma2 > 0:
        raise DegenerateVariance(f"sigma^2 = {profile.sigma2} is not positive")
    if not profile.s > 0:
        raise DegenerateVariance("the prediction needs a positive tilt s")
    lam_star = profile.s * q - profile.log_k
    e_x = float(profile.e_at(np.asarray(x0, dtype=float)))
    sigma = math.sqrt(profile.sigma2)
    return e_x * math.exp(-n * lam_star) / (profile.s * sigma * math.sqrt(2 * math.pi * n))


def tilted_tail(
    x0,
    profile: SpectralProfile,
    n: int,
    q: Union[float, Sequence[float], None] = None,
    paths: int = 100_000,
    stream=0,
    ensemble: Optional[MatrixEnsemble] = None,
):
    """Estimate tail quantities through paths tilted by ``profile.s``.

    ``q`` defaults to ``profile.q`` (the drift matched to the tilt).  With a
    sequence of thresholds the same paths are reused for every ``q`` and a
    list of estimates is returned, which keeps the estimates monotone in q.
    """
    ensemble = ensemble or profile.ensemble
    x0 = np.asarray(x0, dtype=float)
    batch = simulate(ensemble, profile, x0, n, paths, stream, op_id="tilted_tail")
    base = math.log(float(profile.e_at(x0))) + n * profile.log_k
    logs = base - profile.s * batch.S_n + batch.log_weight
    log_e_end = np.log(profile.e_at(batch.X_n))
    qs = [profile.q] if q is None else list(np.atleast_1d(q))
    out = []
    for qq in qs:
        qq = float(qq)
        hit = threshold_hits(batch.S_n, n, qq)
        t_mean, t_se, t_log, ess = _log_mean(logs, hit)
        p_mean, p_se, p_log, _ = _log_mean(logs - log_e_end, hit)
        est = LdpEstimate(
            x0=x0, n=n, q=qq, s=profile.s, tilted=(t_mean, t_se), tilted_prob=(p_mean, p_se),
            log_tilted=t_log, log_tilted_prob=p_log, ess=ess, low_ess=ess < ESS_WARN_FRACTION * paths,
            max_residual=batch.max_residual, mode=batch.mode,
        )
        if profile.s > 0 and profile.sigma2 > 0:
            est.prediction = br_prediction(x0, profile, n, qq)
            est.ratio = t_mean / est.prediction if est.prediction > 0 else math.nan
        out.append(est)
    return out[0] if q is None or np.ndim(q) == 0 else out


# ---------------------------------------------------------------------------
# Edgeworth


def dkw_band(paths: int, alpha: float = 0.01) -> float:
    """Dvoretzky-Kiefer-Wolfowitz radius: ``sup|F_hat - F| <= eps`` w.p. ``1 - alpha``."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * paths))


def edgeworth_cdf(u: np.ndarray, n: int, sigma: float, m3: float, b_x: float) -> np.ndarray:
    phi = stats.norm.pdf(u)
    return stats.norm.cdf(u) + m3 / (6 * sigma**3 * math.sqrt(n)) * (1 - u * u) * phi - b_x / (sigma * math.sqrt(n)) * phi


def _sup_gap(z_sorted: np.ndarray, G) -> float:
    m = z_sorted.size
    g = G(z_sorted)
    below = np.arange(m) / m
    above = np.arange(1, m + 1) / m
    return float(max(np.max(np.abs(g - below)), np.max(np.abs(g - above))))


@dataclass
class EdgeworthReport:
    x0: np.ndarray
    n: int
    u: np.ndarray
    F_hat: np.ndarray
    G_n: np.ndarray
    sup_gap: float
    scaled_gap: float
    normal_gap: float
    dkw99: float
    paths: int
    b_x: float = 0.0
    extras: dict = field(default_factory=dict)

    def rows(self):
        return [{"u": float(a), "F_hat": float(b), "G_n": float(c)} for a, b, c in zip(self.u, self.F_hat, self.G_n)]


def edgeworth_curve(
    x0,
    profile: SpectralProfile,
    bias: Union[BiasFunction, float, None],
    n: int,
    paths: int,
    u_grid: Optional[np.ndarray] = None,
    stream=0,
    ensemble: Optional[MatrixEnsemble] = None,
) -> EdgeworthReport:
    """Compare the law of ``(S_n - n q)/(sigma sqrt n)`` under the tilt with
    its first-order Edgeworth expansion.

    ``sup_gap`` is the exact supremum over all ``u`` (evaluated at the jump
    points of the empirical CDF); ``normal_gap`` is the same against the
    plain normal CDF.
    """
    if not profile.sigma2 > 0:
        raise DegenerateVariance("Edgeworth comparison needs sigma^2 > 0")
    ensemble = ensemble or profile.ensemble
    x0 = np.asarray(x0, dtype=float)
    u = np.linspace(-4.0, 4.0, 201) if u_grid is None else np.asarray(u_grid, dtype=float)
    if isinstance(bias, BiasFunction):
        b_x = float(bias.at(x0))
    else:
        b_x = 0.0 if bias is None else float(bias)
    batch = simulate(ensemble, profile, x0, n, paths, stream, op_id="edgeworth")
    if batch.mode == WEIGHTED:
        raise ValueError("Edgeworth comparison needs exactly tilted paths")
    sigma = math.sqrt(profile.sigma2)
    z = np.sort((batch.S_n - n * profile.q) / (sigma * math.sqrt(n)))

    def G(v):
        return edgeworth_cdf(v, n, sigma, profile.m3, b_x)

    F_hat = np.searchsorted(z, u, side="right") / paths
    sup_gap = max(_sup_gap(z, G), float(np.max(np.abs(F_hat - G(u)))))
    normal_gap = _sup_gap(z, stats.norm.cdf)
    return EdgeworthReport(
        x0=x0, n=n, u=u, F_hat=F_hat, G_n=G(u), sup_gap=sup_gap, scaled_gap=math.sqrt(n) * sup_gap,
        normal_gap=normal_gap, dkw99=dkw_band(paths, 0.01), paths=paths, b_x=b_x,
    )
