"""Random matrix ensembles, their action on the cone, and condition checks.

An ensemble is a law on ``d x d`` matrices, tagged with the cone it acts on:

* ``"nonnegative_c"``: nonnegative allowable matrices acting on the
  nonnegative part of the unit sphere;
* ``"invertible"``: invertible matrices acting on projective space (unit
  vectors modulo sign, representative with first nonzero coordinate > 0).

Laws are either a finite list of atoms or a parametric family.  Parametric
families provide a sampler, a deterministic quadrature rule (used to evaluate
transfer operators), and, for scalar families with closed forms, the exact
moment function and the exponentially tilted law.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

NONNEGATIVE = "nonnegative_c"
INVERTIBLE = "invertible"
CONES = (NONNEGATIVE, INVERTIBLE)
NORMS = ("one", "two")

DEGENERATE_TOL = 1e-300
MAX_RESAMPLE = 16


class LdmatrixError(Exception):
    """Base class for library errors."""


class EnsembleError(LdmatrixError, ValueError):
    """An ensemble violates its declared invariants."""


class DegenerateActionError(LdmatrixError, ArithmeticError):
    """``|ax|`` vanished, so ``a`` does not act on ``x``."""


class SamplingError(LdmatrixError, RuntimeError):
    pass


class ApproximationWarning(UserWarning):
    """A quantity was computed on a grid rather than in closed form."""


def default_norm(cone: str) -> str:
    return "one" if cone == NONNEGATIVE else "two"


# ---------------------------------------------------------------------------
# norms and the projective action


def vnorm(x: np.ndarray, kind: str = "one") -> np.ndarray:
    """Vector norm along the last axis."""
    x = np.asarray(x, dtype=float)
    if kind == "one":
        return np.abs(x).sum(axis=-1)
    if kind == "two":
        return np.sqrt(np.einsum("...i,...i->...", x, x))
    raise ValueError(f"unknown norm kind {kind!r}")


def opnorm(a: np.ndarray, kind: str = "one") -> np.ndarray:
    """Operator norm induced by ``kind``, over the last two axes."""
    a = np.asarray(a, dtype=float)
    if kind == "one":
        return np.abs(a).sum(axis=-2).max(axis=-1)
    if kind == "two":
        if a.shape[-1] == 1:
            return np.abs(a[..., 0, 0])
        return np.linalg.norm(a, 2, axis=(-2, -1))
    raise ValueError(f"unknown norm kind {kind!r}")


def projective_rep(x: np.ndarray) -> np.ndarray:
    """Flip signs so that the first nonzero coordinate is positive."""
    x = np.array(x, dtype=float, copy=True)
    nz = np.abs(x) > 0
    first = np.argmax(nz, axis=-1)
    lead = np.take_along_axis(x, first[..., None], axis=-1)
    return np.where(lead < 0, -x, x)


def normalize(x: np.ndarray, norm: str = "one", cone: str = NONNEGATIVE) -> np.ndarray:
    """Scale ``x`` to the unit sphere of ``norm`` (projective rep for invertible)."""
    x = np.asarray(x, dtype=float)
    r = vnorm(x, norm)
    if np.any(r <= DEGENERATE_TOL):
        raise DegenerateActionError("cannot normalize a zero vector")
    y = x / r[..., None]
    return projective_rep(y) if cone == INVERTIBLE else y


def act(a: np.ndarray, x: np.ndarray, norm: str = "one", cone: str = NONNEGATIVE):
    """Projective action ``a . x = ax/|ax|`` together with ``log|ax|``.

    Broadcasts over leading axes: ``a`` has shape ``(..., d, d)`` and ``x``
    shape ``(..., d)``.

    Returns
    -------
    y : ndarray
        Unit vector ``ax/|ax|``.
    increment : ndarray
        ``log|ax|``, the step of the additive component.
    """
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    ax = np.einsum("...ij,...j->...i", a, x)
    r = vnorm(ax, norm)
    if np.any(r <= DEGENERATE_TOL):
        raise DegenerateActionError("|ax| <= 1e-300: matrix does not act on this vector")
    y = ax / r[..., None]
    if cone == INVERTIBLE:
        y = projective_rep(y)
    return y, np.log(r)


def is_allowable(a: np.ndarray) -> bool:
    a = np.asarray(a)
    return bool(np.all(a >= 0) and np.all(a.max(axis=0) > 0) and np.all(a.max(axis=1) > 0))


def iota(a: np.ndarray, cone: str = NONNEGATIVE, norm: Optional[str] = None) -> float:
    """``min |ax|`` over unit vectors ``x`` of the cone.

    Exact for (nonnegative, 1-norm), where it is the smallest column sum, and
    for (invertible, 2-norm), where it is the smallest singular value.  Other
    combinations are minimized over a fine grid and emit
    :class:`ApproximationWarning`.
    """
    a = np.asarray(a, dtype=float)
    norm = norm or default_norm(cone)
    d = a.shape[0]
    if cone == NONNEGATIVE:
        if not is_allowable(a):
            raise EnsembleError("iota: matrix is not allowable")
        if norm == "one":
            return float(a.sum(axis=0).min())
    else:
        if abs(np.linalg.det(a)) == 0.0:
            raise EnsembleError("iota: matrix is singular")
        if norm == "two":
            return float(np.linalg.svd(a, compute_uv=False).min())
    warnings.warn(f"iota for ({cone}, {norm}) is a grid minimum", ApproximationWarning)
    from .grid import build_grid

    grid = build_grid(d, cone, norm, 4096 if d == 2 else 20000)
    return float(vnorm(grid.nodes @ a.T, norm).min())


# ---------------------------------------------------------------------------
# cone metric


def _nonneg_metric(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # The cross-ratio of x, y and the two exit points of the line through them
    # equals 1 / (max_i x_i/y_i * max_j y_j/x_j); coordinates where both
    # vanish carry no information and are skipped.
    both = (x == 0) & (y == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(both, 0.0, x / y).max(axis=-1)
        down = np.where(both, 0.0, y / x).max(axis=-1)
        prod = up * down
        dist = (prod - 1.0) / (prod + 1.0)
    return np.where(np.isinf(prod), 1.0, np.clip(dist, 0.0, 1.0))


def cone_metric(x: np.ndarray, y: np.ndarray, cone: str = NONNEGATIVE) -> np.ndarray:
    """Bounded projective distance between vectors of the cone.

    For the nonnegative cone this is the cross-ratio distance
    ``(1 - cr) / (1 + cr)`` where ``cr`` is the cross-ratio of ``x, y`` and
    the two points where the line through them (in the simplex chart)
    leaves the orthant.  It is invariant under positive rescaling of either
    argument, exactly symmetric, and equals 1 when one point has a zero
    coordinate the other lacks.

    For invertible ensembles it is the smallest euclidean distance between
    sign representatives of the 2-normalized vectors, divided by sqrt(2) so
    that values lie in [0, 1].

    Broadcasts over leading axes and returns a float for 1-d inputs.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if cone == NONNEGATIVE:
        out = _nonneg_metric(*np.broadcast_arrays(x, y))
    else:
        xs = x / vnorm(x, "two")[..., None]
        ys = y / vnorm(y, "two")[..., None]
        out = np.minimum(vnorm(xs - ys, "two"), vnorm(xs + ys, "two")) / math.sqrt(2.0)
    return float(out) if np.ndim(out) == 0 else out


def contraction_coefficient(a: np.ndarray, grid, norm: Optional[str] = None, cone: Optional[str] = None):
    """Grid lower bound for the contraction coefficient ``c(a)``.

    Returns ``(value, note)`` where ``value`` is the largest ratio
    ``d(a.x, a.y) / d(x, y)`` over distinct grid pairs.  The true coefficient
    is a supremum over the whole sphere, so ``value <= c(a)``.
    """
    nodes = np.asarray(getattr(grid, "nodes", grid), dtype=float)
    cone = cone or getattr(grid, "cone", NONNEGATIVE)
    norm = norm or getattr(grid, "norm", default_norm(cone))
    if nodes.shape[0] < 2:
        raise ValueError("contraction_coefficient needs a grid with at least 2 nodes")
    images, _ = act(np.asarray(a, dtype=float), nodes, norm, cone)
    i, j = np.triu_indices(nodes.shape[0], k=1)
    best = 0.0
    for lo in range(0, i.size, 200_000):
        ii, jj = i[lo : lo + 200_000], j[lo : lo + 200_000]
        d0 = cone_metric(nodes[ii], nodes[jj], cone)
        d1 = cone_metric(images[ii], images[jj], cone)
        keep = d0 > 1e-12
        if np.any(keep):
            best = max(best, float(np.max(d1[keep] / d0[keep])))
    note = f"grid lower bound over {nodes.shape[0]} nodes ({i.size} pairs)"
    return best, note


# ---------------------------------------------------------------------------
# laws


@dataclass
class FiniteLaw:
    """Finitely supported law; ``shifts`` (optional) are coupled to atoms."""

    matrices: np.ndarray
    probs: np.ndarray
    shifts: Optional[np.ndarray] = None

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        if self.matrices.ndim == 1:
            self.matrices = self.matrices[:, None, None]
        self.probs = np.asarray(self.probs, dtype=float)
        if self.shifts is not None:
            self.shifts = np.asarray(self.shifts, dtype=float).reshape(len(self.probs), -1)

    @property
    def size(self) -> int:
        return len(self.probs)


class ParametricLaw:
    """Base class for parametric matrix laws.

    Subclasses implement :meth:`draw`; the others are optional.
    """

    name = "parametric"
    dim = 1
    s_domain: Tuple[float, float] = (-math.inf, math.inf)
    coupled_shift = False

    def draw(self, rng: np.random.Generator, size: int):
        """Return ``(matrices, shifts_or_None)`` with ``size`` draws."""
        raise NotImplementedError

    def quadrature(self, order: int):
        """Deterministic ``(matrices, weights)`` rule approximating the law."""
        raise NotImplementedError

    def log_moment(self, s: float) -> float:
        """``log E|A|^s`` for scalar laws with a closed form."""
        raise NotImplementedError

    def tilted(self, s: float) -> "ParametricLaw":
        """Law of ``A`` under the exponential tilt ``|A|^s / E|A|^s`` (scalars)."""
        raise NotImplementedError

    def transposed(self) -> "ParametricLaw":
        raise NotImplementedError

    def has(self, method: str) -> bool:
        return getattr(type(self), method) is not getattr(ParametricLaw, method)

    def to_config(self) -> dict:
        raise NotImplementedError


class Lognormal(ParametricLaw):
    """Entrywise i.i.d. lognormal matrices, ``log A_ij ~ N(mean, var)``."""

    name = "lognormal"

    def __init__(self, mean: float, var: float, dim: int = 1):
        if var < 0:
            raise EnsembleError("lognormal variance must be nonnegative")
        self.mean, self.var, self.dim = float(mean), float(var), int(dim)

    def draw(self, rng, size):
        z = rng.standard_normal((size, self.dim, self.dim))
        return np.exp(self.mean + math.sqrt(self.var) * z), None

    def quadrature(self, order=96):
        if self.dim == 1:
            z, w = np.polynomial.hermite_e.hermegauss(order)
            w = w / w.sum()
            mats = np.exp(self.mean + math.sqrt(self.var) * z)[:, None, None]
            return mats, w
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([order, 7])))
        mats, _ = self.draw(rng, order)
        return mats, np.full(order, 1.0 / order)

    def log_moment(self, s):
        if self.dim != 1:
            raise NotImplementedError
        return self.mean * s + 0.5 * self.var * s * s

    def tilted(self, s):
        if self.dim != 1:
            raise NotImplementedError
        return Lognormal(self.mean + s * self.var, self.var, 1)

    def transposed(self):
        return self

    def to_config(self):
        return {"type": "lognormal", "mean": self.mean, "var": self.var}


class ShiftedExponential(ParametricLaw):
    """Scalar law with ``log A = E + shift``, ``E ~ Exp(rate)``."""

    name = "shifted_exponential"

    def __init__(self, rate: float = 1.0, shift: float = 0.0):
        if rate <= 0:
            raise EnsembleError("exponential rate must be positive")
        self.rate, self.shift = float(rate), float(shift)
        self.s_domain = (-math.inf, self.rate)

    def draw(self, rng, size):
        e = rng.exponential(1.0 / self.rate, size)
        return np.exp(e + self.shift)[:, None, None], None

    def quadrature(self, order=96):
        x, w = np.polynomial.laguerre.laggauss(order)
        w = w / w.sum()
        return np.exp(x / self.rate + self.shift)[:, None, None], w

    def log_moment(self, s):
        if s >= self.rate:
            return math.inf
        return s * self.shift - math.log1p(-s / self.rate)

    def tilted(self, s):
        if s >= self.rate:
            raise EnsembleError("tilt outside the moment domain")
        return ShiftedExponential(self.rate - s, self.shift)

    def transposed(self):
        return self

    def to_config(self):
        return {"type": "shifted_exponential", "rate": self.rate, "shift": self.shift}


class Arch2(ParametricLaw):
    """Random coefficient of the squared ARCH(2) recursion.

    ``M = [[a1 e^2, a2], [e^2, 0]]`` with ``e`` standard normal, paired with
    the shift ``B = (1, 0)``.  With ``transpose=True`` the law of ``M^T`` is
    returned instead (the orientation used for spectral quantities).
    """

    name = "arch2"
    dim = 2
    s_domain = (-0.5, math.inf)
    coupled_shift = True

    def __init__(self, a1: float, a2: float, transpose: bool = False):
        if a1 <= 0 or a2 <= 0:
            raise EnsembleError("ARCH(2) needs a1 > 0 and a2 > 0")
        if a1 + a2 >= 1:
            raise EnsembleError("ARCH(2) needs a1 + a2 < 1")
        self.a1, self.a2, self.transpose = float(a1), float(a2), bool(transpose)

    def _build(self, eps2: np.ndarray) -> np.ndarray:
        m = np.zeros(eps2.shape + (2, 2))
        m[..., 0, 0] = self.a1 * eps2
        m[..., 0, 1] = self.a2
        m[..., 1, 0] = eps2
        if self.transpose:
            m = np.swapaxes(m, -1, -2)
        return m

    def draw(self, rng, size):
        eps = rng.standard_normal(size)
        shifts = np.zeros((size, 2))
        shifts[:, 0] = 1.0
        return self._build(eps * eps), shifts

    def quadrature(self, order=200):
        # e^2 / 2 is Gamma(1/2): generalized Gauss-Laguerre with weight t^(-1/2) e^(-t)
        t, w = special.roots_genlaguerre(order, -0.5)
        return self._build(2.0 * t), w / w.sum()

    def iota_lower_bound(self, eps2: np.ndarray) -> np.ndarray:
        return np.minimum(self.a1 * eps2, self.a2)

    def transposed(self):
        return Arch2(self.a1, self.a2, not self.transpose)

    def to_config(self):
        return {"type": "arch2", "a1": self.a1, "a2": self.a2, "transpose": self.transpose}


@dataclass
class ConstantShift:
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.atleast_1d(np.asarray(self.vector, dtype=float))

    def to_config(self):
        return {"type": "constant", "vector": self.vector.tolist()}


# ---------------------------------------------------------------------------
# the ensemble


@dataclass
class MatrixEnsemble:
    """A law on ``d x d`` matrices acting on a cone.

    Parameters
    ----------
    dim : int
    cone : {"nonnegative_c", "invertible"}
    law : FiniteLaw or ParametricLaw
    shift : ConstantShift, optional
        Law of the additive vector ``B`` when it is not coupled to the atoms.
    norm : {"one", "two"}, optional
        Defaults to the 1-norm on the nonnegative cone, 2-norm otherwise.
    """

    dim: int
    cone: str
    law: object
    shift: Optional[ConstantShift] = None
    norm: Optional[str] = None
    name: str = ""

    def __post_init__(self):
        if self.cone not in CONES:
            raise EnsembleError(f"unknown cone {self.cone!r}")
        self.norm = self.norm or default_norm(self.cone)
        if self.norm not in NORMS:
            raise EnsembleError(f"unknown norm {self.norm!r}")
        if self.dim < 1:
            raise EnsembleError("dim must be positive")
        if isinstance(self.law, FiniteLaw):
            self._check_finite()
        elif isinstance(self.law, ParametricLaw):
            if self.law.dim != self.dim:
                raise EnsembleError("parametric law dimension does not match dim")
        else:
            raise EnsembleError("law must be FiniteLaw or ParametricLaw")

    def _check_finite(self):
        law = self.law
        if law.matrices.shape[1:] != (self.dim, self.dim):
            raise EnsembleError("atom shape does not match dim")
        if np.any(law.probs <= 0):
            raise EnsembleError("atom probabilities must be positive")
        if abs(law.probs.sum() - 1.0) > 1e-12:
            raise EnsembleError(f"atom probabilities sum to {law.probs.sum():.15g}, not 1")
        for a in law.matrices:
            if self.cone == NONNEGATIVE and not is_allowable(a):
                raise EnsembleError(f"atom {a.tolist()} is not nonnegative allowable")
            if self.cone == INVERTIBLE and np.linalg.det(a) == 0.0:
                raise EnsembleError(f"atom {a.tolist()} is singular")

    @property
    def is_finite(self) -> bool:
        return isinstance(self.law, FiniteLaw)

    @property
    def s_domain(self) -> Tuple[float, float]:
        return (-math.inf, math.inf) if self.is_finite else self.law.s_domain

    @property
    def has_shift(self) -> bool:
        if self.shift is not None:
            return True
        if self.is_finite:
            return self.law.shifts is not None
        return self.law.coupled_shift

    def quadrature(self, order: Optional[int] = None):
        """``(matrices, weights)``: the atoms, or the family's quadrature rule."""
        if self.is_finite:
            return self.law.matrices, self.law.probs
        return self.law.quadrature() if order is None else self.law.quadrature(order)

    def transposed(self) -> "MatrixEnsemble":
        if self.is_finite:
            law = FiniteLaw(np.swapaxes(self.law.matrices, 1, 2).copy(), self.law.probs.copy(), self.law.shifts)
        else:
            law = self.law.transposed()
        return MatrixEnsemble(self.dim, self.cone, law, self.shift, self.norm, self.name + "^T")

    def _cone_ok(self, mats: np.ndarray) -> np.ndarray:
        if self.cone == NONNEGATIVE:
            return (
                np.all(mats >= 0, axis=(1, 2))
                & np.all(mats.max(axis=1) > 0, axis=1)
                & np.all(mats.max(axis=2) > 0, axis=1)
            )
        return np.linalg.det(mats) != 0.0

    def draw(self, rng: np.random.Generator, size: int):
        """``size`` i.i.d. draws: ``(indices_or_None, matrices, shifts_or_None)``."""
        if self.is_finite:
            idx = rng.choice(self.law.size, size=size, p=self.law.probs)
            mats = self.law.matrices[idx]
            shifts = self.law.shifts[idx] if self.law.shifts is not None else None
        else:
            idx = None
            mats, shifts = self.law.draw(rng, size)
            bad = ~self._cone_ok(mats)
            tries = 0
            while np.any(bad):
                tries += 1
                if tries > MAX_RESAMPLE:
                    raise SamplingError(
                        f"{int(bad.sum())} draws violate the {self.cone} invariant after {MAX_RESAMPLE} retries"
                    )
                redo, resh = self.law.draw(rng, int(bad.sum()))
                mats[bad] = redo
                if shifts is not None:
                    shifts[bad] = resh
                bad = ~self._cone_ok(mats)
        if shifts is None and self.shift is not None:
            shifts = np.broadcast_to(self.shift.vector, (size, self.dim)).copy()
        return idx, mats, shifts

    def to_config(self) -> dict:
        if self.is_finite:
            atoms = []
            for i in range(self.law.size):
                atom = {"matrix": self.law.matrices[i].tolist(), "p": float(self.law.probs[i])}
                if self.law.shifts is not None:
                    atom["shift"] = self.law.shifts[i].tolist()
                atoms.append(atom)
            law = {"type": "finite", "atoms": atoms}
        else:
            law = self.law.to_config()
        out = {"dim": self.dim, "cone": self.cone, "norm": self.norm, "law": law}
        if self.shift is not None:
            out["shift"] = self.shift.to_config()
        return out


def sample(ensemble: MatrixEnsemble, stream, size: Optional[int] = None):
    """Draw matrices (and shift vectors) from ``ensemble``.

    ``stream`` is a ``numpy`` Generator or a :class:`~ldmatrix._rng.Substream`
    (block 0 is used).  With ``size=None`` a single ``(matrix, shift)`` pair
    is returned, otherwise arrays with a leading axis of length ``size``.
    """
    rng = stream if isinstance(stream, np.random.Generator) else stream.generator(0)
    n = 1 if size is None else size
    _, mats, shifts = ensemble.draw(rng, n)
    if size is None:
        return mats[0], None if shifts is None else shifts[0]
    return mats, shifts


# ---------------------------------------------------------------------------
# JSON config and presets


def ensemble_from_config(cfg: dict) -> MatrixEnsemble:
    """Build an ensemble from its JSON description (see README)."""
    if "preset" in cfg:
        return preset(cfg["preset"], **cfg.get("params", {}))
    try:
        dim = int(cfg["dim"])
        cone = cfg.get("cone", NONNEGATIVE)
        law_cfg = cfg["law"]
    except KeyError as exc:
        raise EnsembleError(f"ensemble config missing key {exc}") from None
    kind = law_cfg.get("type")
    if kind == "finite":
        atoms = law_cfg["atoms"]
        mats = np.array([np.atleast_2d(np.asarray(a["matrix"], dtype=float)) for a in atoms])
        probs = np.array([float(a["p"]) for a in atoms])
        shifts = None
        if any("shift" in a for a in atoms):
            if not all("shift" in a for a in atoms):
                raise EnsembleError("either every atom carries a shift or none does")
            shifts = np.array([np.atleast_1d(a["shift"]) for a in atoms], dtype=float)
        law = FiniteLaw(mats, probs, shifts)
    elif kind == "lognormal":
        law = Lognormal(law_cfg["mean"], law_cfg["var"], dim)
    elif kind == "shifted_exponential":
        law = ShiftedExponential(law_cfg.get("rate", 1.0), law_cfg.get("shift", 0.0))
    elif kind == "arch2":
        law = Arch2(law_cfg["a1"], law_cfg["a2"], law_cfg.get("transpose", False))
    else:
        raise EnsembleError(f"unknown law type {kind!r}")
    shift = None
    if cfg.get("shift") is not None:
        sc = cfg["shift"]
        if sc.get("type", "constant") != "constant":
            raise EnsembleError(f"unknown shift type {sc.get('type')!r}")
        shift = ConstantShift(sc["vector"])
    return MatrixEnsemble(dim, cone, law, shift, cfg.get("norm"), cfg.get("name", ""))


def finite(matrices: Sequence, probs: Sequence[float], cone: str = NONNEGATIVE, norm: Optional[str] = None, shifts=None, name: str = "") -> MatrixEnsemble:
    law = FiniteLaw(np.asarray(matrices, dtype=float), np.asarray(probs, dtype=float), shifts)
    return MatrixEnsemble(law.matrices.shape[1], cone, law, None, norm, name)


def two_point(high: float = 2.0, low: float = 0.5, p: float = 0.2) -> MatrixEnsemble:
    """Scalar law ``{high: p, low: 1 - p}``."""
    return finite([[[high]], [[low]]], [p, 1.0 - p], name="two_point")


def e3() -> MatrixEnsemble:
    """Two strictly positive 2x2 atoms with equal weight."""
    return finite([[[2.0, 1.0], [1.0, 1.0]], [[0.3, 0.2], [0.1, 0.4]]], [0.5, 0.5], name="e3")


def identity(dim: int = 2, cone: str = NONNEGATIVE) -> MatrixEnsemble:
    return finite([np.eye(dim)], [1.0], cone=cone, name="identity")


def lognormal_scalar(mean: float = -0.5, var: float = 1.0, shift: Optional[float] = None) -> MatrixEnsemble:
    return MatrixEnsemble(
        1, NONNEGATIVE, Lognormal(mean, var, 1), None if shift is None else ConstantShift([shift]), name="lognormal"
    )


def skewed_exponential(rate: float = 1.0, shift: float = -1.5) -> MatrixEnsemble:
    return MatrixEnsemble(1, NONNEGATIVE, ShiftedExponential(rate, shift), name="skewed_exponential")


def arch2(a1: float = 0.3, a2: float = 0.25, transpose: bool = True) -> MatrixEnsemble:
    """ARCH(2) coefficient law; ``transpose=True`` gives ``A = M^T``."""
    return MatrixEnsemble(2, NONNEGATIVE, Arch2(a1, a2, transpose), name="arch2")


PRESETS = {
    "two_point": two_point,
    "e3": e3,
    "identity": identity,
    "lognormal": lognormal_scalar,
    "skewed_exponential": skewed_exponential,
    "arch2": arch2,
}


def preset(name: str, **params) -> MatrixEnsemble:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise EnsembleError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# condition diagnostics


@dataclass
class ConditionReport:
    allowable_all: bool
    positive_exists: bool
    proximality_hint: bool
    arithmetic_diagnostic: str
    witness: Optional[dict] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "allowable_all": self.allowable_all,
            "positive_exists": self.positive_exists,
            "proximality_hint": self.proximality_hint,
            "arithmetic_diagnostic": self.arithmetic_diagnostic,
            "witness": self.witness,
            "notes": list(self.notes),
        }


NON_ARITHMETIC = "non_arithmetic_certified"
INCONCLUSIVE = "inconclusive"


def _dominant(a: np.ndarray):
    ev = np.linalg.eigvals(a)
    order = np.argsort(-np.abs(ev))
    lead = ev[order[0]]
    simple = len(ev) == 1 or abs(ev[order[1]]) < abs(lead) * (1 - 1e-9)
    real = abs(lead.imag) <= 1e-12 * max(1.0, abs(lead))
    return lead.real, bool(simple and real)


def rational_distance(r: float, max_den: int = 10**6):
    """Best rational ``p/q`` with ``q <= max_den`` and its distance to ``r``."""
    frac = Fraction(r).limit_denominator(max_den)
    return frac, abs(r - frac.numerator / frac.denominator)


def check_conditions(ensemble: MatrixEnsemble, max_len: int = 3, max_den: int = 10**6) -> ConditionReport:
    """Heuristic check of allowability, positivity, proximality and lattice type.

    Products of up to ``max_len`` atoms are searched.  Non-arithmeticity is
    certified only when two strictly positive (or, for invertible laws,
    proximal) products have log dominant eigenvalues whose ratio stays away
    from every rational with denominator at most ``max_den`` by more than
    the floating point error of the ratio.  Arithmeticity is never claimed.
    """
    if not ensemble.is_finite:
        return ConditionReport(
            allowable_all=True,
            positive_exists=False,
            proximality_hint=False,
            arithmetic_diagnostic=INCONCLUSIVE,
            notes=[f"parametric law {ensemble.law.name}: diagnostics need finite support"],
        )
    law = ensemble.law
    notes = []
    if ensemble.cone == NONNEGATIVE:
        allowable_all = all(is_allowable(a) for a in law.matrices)
    else:
        allowable_all = all(np.linalg.det(a) != 0 for a in law.matrices)

    m = law.size
    if m > 50:
        max_len = 1
        notes.append("more than 50 atoms: product search limited to single atoms")
    products = []
    for length in range(1, max_len + 1):
        for word in itertools.product(range(m), repeat=length):
            p = np.eye(ensemble.dim)
            for i in word:
                p = law.matrices[i] @ p
            products.append((word, p))

    atom_positive = any(np.all(a > 0) for a in law.matrices)
    positive_exists = False
    proximal = False
    candidates = {}
    for word, p in products:
        pos = bool(np.all(p > 0))
        lead, prox = _dominant(p)
        positive_exists |= pos
        proximal |= prox
        usable = pos if ensemble.cone == NONNEGATIVE else prox
        if usable and lead != 0:
            log_l = math.log(abs(lead))
            if abs(log_l) > 1e-12:
                candidates.setdefault(round(log_l, 12), (word, log_l))
    if positive_exists and not atom_positive:
        notes.append(f"no atom is strictly positive but a product of length <= {max_len} is")

    eps = np.finfo(float).eps
    best = None
    items = list(candidates.values())[:40]
    for (wa, la), (wb, lb) in itertools.combinations(items, 2):
        r = la / lb
        frac, dist = rational_distance(r, max_den)
        tol = 256 * eps * (1 + abs(r)) * (1 + 1 / abs(la) + 1 / abs(lb))
        score = dist / tol
        if best is None or score > best[0]:
            best = (
                score,
                {
                    "a": list(wa),
                    "b": list(wb),
                    "ratio": r,
                    "nearest_rational": [frac.numerator, frac.denominator],
                    "distance": dist,
                    "tolerance": tol,
                },
            )
    if best is None:
        notes.append("fewer than two usable dominant eigenvalues")
        diag, witness = INCONCLUSIVE, None
    else:
        witness = best[1]
        diag = NON_ARITHMETIC if best[0] > 1.0 else INCONCLUSIVE
    return ConditionReport(allowable_all, positive_exists, proximal, diag, witness, notes)
