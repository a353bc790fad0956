"""Rectangular grids with rectangle-rule quadrature weights.

Every integral in the package is a weighted sum over a :class:`Grid`. Tensor
grids keep their per-axis factors so kernels can be applied axis by axis.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["Grid", "make_uniform_grid", "make_tensor_grid", "split_axes", "refine_grid"]

_KINDS = ("closed", "interior", "periodic")


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Discretized box domain.

    Attributes
    ----------
    points : ndarray, shape (m, dims)
        Coordinates, row-major over ``axes`` for tensor grids.
    weights : ndarray, shape (m,)
        Quadrature weight per point.
    bounds : tuple of (a, b)
        Closed interval per dimension.
    axes : tuple of ndarray or None
        1D coordinates per dimension when the grid is a tensor product.
    axis_weights : tuple of ndarray or None
        1D weights per dimension (tensor grids only).
    kinds : tuple of str or None
        Point placement per axis ("closed", "interior" or "periodic").
    """

    points: np.ndarray
    weights: np.ndarray
    bounds: tuple
    axes: tuple = None
    axis_weights: tuple = None
    kinds: tuple = None

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim == 1:
            pts = _frozen(pts[:, None])
        w = _frozen(self.weights)
        if w.shape != (pts.shape[0],):
            raise ValueError("weights must have one entry per point")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        if len(bounds) != pts.shape[1]:
            raise ValueError("bounds must give one interval per dimension")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bounds", bounds)
        if self.axes is not None:
            object.__setattr__(self, "axes", tuple(_frozen(a) for a in self.axes))
            object.__setattr__(
                self, "axis_weights", tuple(_frozen(a) for a in self.axis_weights)
            )

    @property
    def dims(self):
        return self.points.shape[1]

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def shape(self):
        """Tensor shape of the grid (``(size,)`` for non-tensor grids)."""
        if self.axes is None:
            return (self.size,)
        return tuple(len(a) for a in self.axes)

    @property
    def volume(self):
        return float(np.prod([b - a for a, b in self.bounds]))

    @property
    def is_tensor(self):
        return self.axes is not None

    def integrate(self, values):
        """Weighted sum over the last axis of ``values``."""
        return np.asarray(values) @ self.weights

    def same_as(self, other):
        return (
            self.bounds == other.bounds
            and self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def to_dict(self):
        out = {
            "dims": self.dims,
            "bounds": [list(b) for b in self.bounds],
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }
        if self.is_tensor:
            out["axes"] = [a.tolist() for a in self.axes]
            out["axis_weights"] = [a.tolist() for a in self.axis_weights]
            out["kinds"] = list(self.kinds) if self.kinds else None
        return out

    @classmethod
    def from_dict(cls, data):
        axes = data.get("axes")
        return cls(
            points=np.asarray(data["points"], dtype=float).reshape(-1, data["dims"]),
            weights=data["weights"],
            bounds=data["bounds"],
            axes=tuple(axes) if axes is not None else None,
            axis_weights=tuple(data["axis_weights"]) if axes is not None else None,
            kinds=tuple(data["kinds"]) if data.get("kinds") else None,
        )


def make_uniform_grid(bounds, m, kind="closed"):
    """Equispaced 1D grid with equal weights ``(b - a) / m``.

    ``kind="closed"`` places m points on [a, b] including both endpoints.
    ``"interior"`` uses the m interior nodes of an (m + 2)-node lattice and
    ``"periodic"`` drops the right endpoint (a ≡ b).
    """
    a, b = (float(v) for v in np.ravel(bounds))
    m = int(m)
    if not b > a:
        raise ValueError(f"empty interval [{a}, {b}]")
    if kind not in _KINDS:
        raise ValueError(f"kind must be one of {_KINDS}")
    if m < (2 if kind == "closed" else 1):
        raise ValueError("closed grids need m >= 2 points")
    if kind == "closed":
        x = np.linspace(a, b, m)
    elif kind == "interior":
        x = a + (b - a) * np.arange(1, m + 1) / (m + 1)
    else:
        x = a + (b - a) * np.arange(m) / m
    w = np.full(m, (b - a) / m)
    return Grid(
        points=x[:, None],
        weights=w,
        bounds=((a, b),),
        axes=(x,),
        axis_weights=(w,),
        kinds=(kind,),
    )


def make_tensor_grid(axes):
    """Cartesian product of 1D grids in row-major order."""
    axes = list(axes)
    if not axes:
        raise ValueError("need at least one axis")
    if len(axes) == 1:
        return axes[0]
    coords, wts, bounds, kinds = [], [], [], []
    for g in axes:
        if g.dims != 1 or not g.is_tensor:
            raise ValueError("tensor grids are built from 1D grids")
        coords.append(g.axes[0])
        wts.append(g.axis_weights[0])
        bounds.extend(g.bounds)
        kinds.append(g.kinds[0] if g.kinds else "closed")
    mesh = np.meshgrid(*coords, indexing="ij")
    points = np.stack([c.ravel() for c in mesh], axis=1)
    weights = wts[0]
    for w in wts[1:]:
        weights = np.multiply.outer(weights, w)
    return Grid(
        points=points,
        weights=weights.ravel(),
        bounds=tuple(bounds),
        axes=tuple(coords),
        axis_weights=tuple(wts),
        kinds=tuple(kinds),
    )


def split_axes(grid):
    """1D factor grids of a tensor grid."""
    if not grid.is_tensor:
        raise ValueError("grid is not a tensor product")
    kinds = grid.kinds or ("closed",) * grid.dims
    return [
        Grid(points=c[:, None], weights=w, bounds=(bd,), axes=(c,), axis_weights=(w,), kinds=(k,))
        for c, w, bd, k in zip(grid.axes, grid.axis_weights, grid.bounds, kinds)
    ]


def refine_grid(grid, factor):
    """Uniform tensor grid ``factor`` times finer that contains every node of ``grid``.

    Returns the fine grid and, per axis, the fine-grid index of each coarse node.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    fine_axes, index = [], []
    for g in split_axes(grid):
        kind = g.kinds[0]
        m = g.size
        if kind == "closed":
            mf = (m - 1) * factor + 1
            idx = np.arange(m) * factor
        elif kind == "interior":
            mf = (m + 1) * factor - 1
            idx = (np.arange(m) + 1) * factor - 1
        else:
            mf = m * factor
            idx = np.arange(m) * factor
        fine_axes.append(make_uniform_grid(g.bounds[0], mf, kind))
        index.append(idx)
    return make_tensor_grid(fine_axes), tuple(index)
