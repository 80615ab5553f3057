"""Discretizations of the sphere on which transfer operators act."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .ensemble import INVERTIBLE, NONNEGATIVE, default_norm, normalize, vnorm

ARC = "arc"
PROJECTIVE_ARC = "projective_arc"
POINT = "point"
SCATTER = "scatter"


@dataclass
class SphereGrid:
    """Nodes on the unit sphere of the cone plus quadrature weights.

    ``kind`` selects the interpolation rule: ``"point"`` (d = 1),
    ``"arc"`` (d = 2 nonnegative, piecewise linear in ``u = x1/(x1+x2)``),
    ``"projective_arc"`` (d = 2 invertible, piecewise linear in the angle
    modulo pi) and ``"scatter"`` (d >= 3, nearest node).
    """

    dim: int
    cone: str
    norm: str
    kind: str
    nodes: np.ndarray
    weights: np.ndarray
    _tree: Optional[cKDTree] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def locate(self, y: np.ndarray):
        """Interpolation stencil for points ``y`` (shape ``(..., d)``).

        Returns ``(index, weight)`` arrays with a trailing stencil axis, so
        that ``f(y) ~ sum(weight * f[index], axis=-1)``.
        """
        y = np.asarray(y, dtype=float)
        lead = y.shape[:-1]
        n = self.size
        if self.kind == POINT:
            return np.zeros(lead + (1,), dtype=np.intp), np.ones(lead + (1,))
        if self.kind == ARC:
            u = y[..., 0] / (y[..., 0] + y[..., 1])
            pos = np.clip(u, 0.0, 1.0) * (n - 1)
            j = np.minimum(np.floor(pos).astype(np.intp), n - 2)
            frac = pos - j
            return np.stack([j, j + 1], axis=-1), np.stack([1.0 - frac, frac], axis=-1)
        if self.kind == PROJECTIVE_ARC:
            theta = np.mod(np.arctan2(y[..., 1], y[..., 0]), math.pi)
            pos = theta / (math.pi / n)
            j = np.floor(pos).astype(np.intp)
            frac = pos - j
            j = np.mod(j, n)
            return np.stack([j, np.mod(j + 1, n)], axis=-1), np.stack([1.0 - frac, frac], axis=-1)
        dirs = y / vnorm(y, "two")[..., None]
        _, idx = self._tree.query(dirs.reshape(-1, self.dim))
        idx = np.mod(idx, n).reshape(lead + (1,))
        return idx, np.ones(lead + (1,))

    def interpolate(self, values: np.ndarray, y: np.ndarray) -> np.ndarray:
        idx, w = self.locate(y)
        return np.sum(w * np.asarray(values)[idx], axis=-1)

    def nearest(self, y: np.ndarray) -> np.ndarray:
        idx, w = self.locate(y)
        return np.take_along_axis(idx, np.argmax(w, axis=-1)[..., None], axis=-1)[..., 0]


def arc_nodes(resolution: int, norm: str = "one") -> np.ndarray:
    u = np.linspace(0.0, 1.0, resolution)
    return normalize(np.stack([u, 1.0 - u], axis=-1), norm)


def build_grid(ensemble_or_dim, cone: Optional[str] = None, norm: Optional[str] = None, resolution: int = 2048) -> SphereGrid:
    """Deterministic grid on the sphere of the ensemble's cone.

    Accepts an ensemble (its ``dim``, ``cone`` and ``norm`` are used) or an
    explicit dimension.  For d = 2 the nodes are equally spaced in the simplex
    parameter (nonnegative) or in angle (invertible), with trapezoidal
    weights; for d >= 3 they are Halton directions mapped into the cone, with
    equal weights.  d = 1 gives the single point ``1``.
    """
    if hasattr(ensemble_or_dim, "dim"):
        ens = ensemble_or_dim
        dim, cone, norm = ens.dim, cone or ens.cone, norm or ens.norm
    else:
        dim = int(ensemble_or_dim)
        cone = cone or NONNEGATIVE
        norm = norm or default_norm(cone)
    if dim == 1:
        return SphereGrid(1, cone, norm, POINT, np.ones((1, 1)), np.ones(1))
    if dim == 2 and resolution < 2 or dim > 2 and resolution < 8:
        raise ValueError(f"grid resolution {resolution} too small")
    if dim == 2 and cone == NONNEGATIVE:
        nodes = arc_nodes(resolution, norm)
        w = np.full(resolution, 1.0 / (resolution - 1))
        w[[0, -1]] *= 0.5
        return SphereGrid(2, cone, norm, ARC, nodes, w / w.sum())
    if dim == 2:
        theta = np.arange(resolution) * (math.pi / resolution)
        nodes = normalize(np.stack([np.cos(theta), np.sin(theta)], axis=-1), norm, INVERTIBLE)
        return SphereGrid(2, cone, norm, PROJECTIVE_ARC, nodes, np.full(resolution, 1.0 / resolution))

    halton = qmc.Halton(d=dim, scramble=True, seed=20240611)
    pts = np.clip(halton.random(resolution), 1e-12, 1 - 1e-12)
    if cone == NONNEGATIVE:
        raw = -np.log(pts)  # Dirichlet(1) directions: uniform on the simplex
    else:
        from scipy.special import ndtri

        raw = ndtri(pts)
    nodes = normalize(raw, norm, cone)
    unit = nodes / vnorm(nodes, "two")[:, None]
    tree_pts = np.vstack([unit, -unit]) if cone == INVERTIBLE else unit
    return SphereGrid(
        dim, cone, norm, SCATTER, nodes, np.full(resolution, 1.0 / resolution), cKDTree(tree_pts)
    )
