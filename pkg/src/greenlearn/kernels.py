"""Reproducing kernels for Green's functions and bias terms.

A kernel acts on coordinate tuples ``p`` and ``q`` of length ``arity``. For a
Green's function on ``D_X x D_Y`` the tuple is the concatenation of the input
and output coordinates, e.g. ``(x, y)`` in 1D or ``(x, t, y, s)`` for a
space-time problem.

Besides pointwise evaluation, each kernel provides :meth:`KernelSpec.operator`,
the discretized integral operator between two tensor grids. Separable and
sine-series kernels apply it axis by axis, so the dense Gram matrix over the
product grid is never formed unless a kernel has no such structure.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import SymmetryConditionError

__all__ = [
    "KernelSpec",
    "Gaussian",
    "Sobolev1Dirichlet",
    "SobolevTail",
    "BrownianBridgeCov",
    "ExponentialCov",
    "Product",
    "Symmetrized",
    "Causal",
    "Convolutional",
    "eval_kernel",
    "gram_cross",
    "symmetrize",
    "causal_mask",
    "convolutional",
    "kernel_from_dict",
]

_CHUNK = 4096


def _as_points(p, arity):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0:
        p = p[None]
    if p.shape[-1] != arity:
        raise ValueError(f"expected coordinate tuples of length {arity}, got {p.shape[-1]}")
    return p


def _mode_apply(V, mat, axis):
    """Contract ``mat`` (tgt x src) against axis ``axis`` of ``V``."""
    out = np.tensordot(V, mat, axes=([axis], [1]))
    return np.moveaxis(out, -1, axis)


def _mesh_points(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([c.ravel() for c in mesh], axis=-1)


class KernelSpec:
    """Base class. Subclasses set ``arity`` and implement ``_eval``."""

    arity = None
    type_name = None

    def __call__(self, p, q):
        p = _as_points(p, self.arity)
        q = _as_points(q, self.arity)
        return self._eval(p, q)

    def _eval(self, p, q):
        raise NotImplementedError

    def gram(self, rows, cols):
        rows = _as_points(rows, self.arity).reshape(-1, self.arity)
        cols = _as_points(cols, self.arity).reshape(-1, self.arity)
        out = np.empty((rows.shape[0], cols.shape[0]))
        step = max(1, _CHUNK // max(1, cols.shape[0]))
        for i in range(0, rows.shape[0], step):
            out[i : i + step] = self._eval(rows[i : i + step, None, :], cols[None, :, :])
        return out

    def operator(self, src_axes, tgt_axes):
        """Discrete integral operator from a tensor grid to another.

        Returns ``apply(V)`` mapping an array of shape
        ``(*batch, *src_shape)`` to ``out[..., p] = sum_q K(p, q) V[..., q]``
        of shape ``(*batch, *tgt_shape)``. ``V`` must already carry any
        quadrature weights.
        """
        self._check_axes(src_axes, tgt_axes)
        return _dense_operator(self, src_axes, tgt_axes)

    def _check_axes(self, src_axes, tgt_axes):
        if len(src_axes) != self.arity or len(tgt_axes) != self.arity:
            raise ValueError(f"kernel of arity {self.arity} needs {self.arity} grid axes")

    def to_dict(self):
        raise NotImplementedError


def _dense_operator(kernel, src_axes, tgt_axes):
    src_shape = tuple(len(a) for a in src_axes)
    tgt_shape = tuple(len(a) for a in tgt_axes)
    G = kernel.gram(_mesh_points(tgt_axes), _mesh_points(src_axes))
    nd = len(src_shape)

    def apply(V):
        V = np.asarray(V)
        batch = V.shape[: V.ndim - nd]
        flat = V.reshape(batch + (-1,))
        return (flat @ G.T).reshape(batch + tgt_shape)

    return apply


def eval_kernel(spec, p, q):
    """Kernel value at a single pair of coordinate tuples."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != (spec.arity,) or q.shape != (spec.arity,):
        raise ValueError(f"kernel has arity {spec.arity}; got tuples of shape {p.shape}, {q.shape}")
    return float(spec(p, q))


def gram_cross(spec, rows, cols):
    """Matrix ``K(rows[i], cols[j])``."""
    return spec.gram(rows, cols)


# ---------------------------------------------------------------------------
# Base kernels


def _gauss1d(d, var):
    return np.exp(-0.5 * d * d / var) / math.sqrt(2.0 * math.pi * var)


@dataclass(frozen=True)
class Gaussian(KernelSpec):
    """Product of normalized 1D Gaussian densities, one variance per axis."""

    variances: tuple
    type_name = "gaussian"

    def __post_init__(self):
        v = tuple(float(x) for x in np.ravel(self.variances))
        if not v or min(v) <= 0:
            raise ValueError("gaussian variances must be positive")
        object.__setattr__(self, "variances", v)

    @property
    def arity(self):
        return len(self.variances)

    def _eval(self, p, q):
        d = p - q
        out = np.ones(np.broadcast_shapes(p.shape, q.shape)[:-1])
        for a, var in enumerate(self.variances):
            out = out * _gauss1d(d[..., a], var)
        return out

    def operator(self, src_axes, tgt_axes):
        self._check_axes(src_axes, tgt_axes)
        mats = [
            _gauss1d(np.subtract.outer(t, s), var)
            for s, t, var in zip(src_axes, tgt_axes, self.variances)
        ]
        nd = self.arity

        def apply(V):
            for a, M in enumerate(mats):
                V = _mode_apply(V, M, V.ndim - nd + a)
            return V

        return apply

    def to_dict(self):
        return {"type": self.type_name, "variances": list(self.variances)}


@dataclass(frozen=True)
class Sobolev1Dirichlet(KernelSpec):
    """Green's function of -Laplace on [0, 1]^d with zero Dirichlet data.

    Truncated sine series with ``n_terms`` modes per axis and prefactor 2^d;
    the reproducing kernel of W^{1,2}_0 under the Dirichlet energy.
    """

    n_terms: int = 200
    dim: int = 2
    type_name = "sobolev1_dirichlet"

    def __post_init__(self):
        if int(self.n_terms) < 1 or int(self.dim) < 1:
            raise ValueError("n_terms and dim must be positive")
        object.__setattr__(self, "n_terms", int(self.n_terms))
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def arity(self):
        return self.dim

    def coefficients(self):
        k = np.arange(1, self.n_terms + 1, dtype=np.float64)
        ksq = np.zeros((self.n_terms,) * self.dim)
        for a in range(self.dim):
            shape = [1] * self.dim
            shape[a] = -1
            ksq = ksq + (k**2).reshape(shape)
        return 2.0**self.dim / (math.pi**2 * ksq)

    def _eval(self, p, q):
        k = np.arange(1, self.n_terms + 1, dtype=np.float64)
        shape = np.broadcast_shapes(p.shape, q.shape)[:-1]
        p = np.broadcast_to(p, shape + (self.dim,)).reshape(-1, self.dim)
        q = np.broadcast_to(q, shape + (self.dim,)).reshape(-1, self.dim)
        C = self.coefficients()
        out = np.empty(p.shape[0])
        letters = "abcdefgh"[: self.dim]
        expr = ",".join("z" + c for c in letters) + "," + letters + "->z"
        step = max(1, _CHUNK // self.n_terms ** (self.dim - 1))
        for i in range(0, p.shape[0], step):
            sl = slice(i, i + step)
            A = [
                np.sin(math.pi * np.multiply.outer(p[sl, a], k))
                * np.sin(math.pi * np.multiply.outer(q[sl, a], k))
                for a in range(self.dim)
            ]
            out[sl] = np.einsum(expr, *A, C, optimize=True)
        return out.reshape(shape)

    def operator(self, src_axes, tgt_axes):
        self._check_axes(src_axes, tgt_axes)
        k = np.arange(1, self.n_terms + 1, dtype=np.float64)
        S_src = [np.sin(math.pi * np.multiply.outer(k, s)) for s in src_axes]  # N x m
        S_tgt = [np.sin(math.pi * np.multiply.outer(t, k)) for t in tgt_axes]  # m x N
        C = self.coefficients()
        nd = self.dim

        def apply(V):
            for a, S in enumerate(S_src):
                V = _mode_apply(V, S, V.ndim - nd + a)
            V = V * C
            for a, S in enumerate(S_tgt):
                V = _mode_apply(V, S, V.ndim - nd + a)
            return V

        return apply

    def to_dict(self):
        return {"type": self.type_name, "n_terms": self.n_terms, "dim": self.dim}


@dataclass(frozen=True)
class SobolevTail(KernelSpec):
    """Kernel of the W^m_2[0, 1] component vanishing to order m at 0.

    ``K(x, y) = int_0^1 G_m(x, z) G_m(y, z) dz`` with
    ``G_m(x, z) = (x - z)_+^{m-1} / (m-1)!``; m = 1 gives ``min(x, y)``.
    """

    order: int = 1
    arity = 1
    type_name = "sobolev_m_tail"

    def __post_init__(self):
        if int(self.order) < 1:
            raise ValueError("order must be >= 1")
        object.__setattr__(self, "order", int(self.order))

    def _eval(self, p, q):
        x, y = p[..., 0], q[..., 0]
        lo, hi = np.minimum(x, y), np.maximum(x, y)
        lo = np.maximum(lo, 0.0)
        m = self.order
        if m == 1:
            return lo
        if m == 2:
            return 0.5 * lo**2 * hi - lo**3 / 6.0
        # substitute u = lo - z and expand (hi - lo + u)^{m-1} binomially
        gap = hi - lo
        out = np.zeros(np.broadcast_shapes(lo.shape, hi.shape))
        for j in range(m):
            out = out + math.comb(m - 1, j) * gap ** (m - 1 - j) * lo ** (m + j) / (m + j)
        return out / math.factorial(m - 1) ** 2

    def to_dict(self):
        return {"type": self.type_name, "order": self.order}


@dataclass(frozen=True)
class BrownianBridgeCov(KernelSpec):
    """Covariance ``variance * (min(x, y) - x y)`` of a Brownian bridge on [0, 1]."""

    variance: float = 1.0
    arity = 1
    type_name = "brownian_bridge_cov"

    def _eval(self, p, q):
        x, y = p[..., 0], q[..., 0]
        return self.variance * (np.minimum(x, y) - x * y)

    def to_dict(self):
        return {"type": self.type_name, "variance": float(self.variance)}


@dataclass(frozen=True)
class ExponentialCov(KernelSpec):
    """Ornstein-Uhlenbeck covariance ``exp(-|p - q| / length)``."""

    length: float = 0.1
    dim: int = 1
    type_name = "exponential_cov"

    def __post_init__(self):
        if float(self.length) <= 0:
            raise ValueError("length must be positive")
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def arity(self):
        return self.dim

    def _eval(self, p, q):
        return np.exp(-np.linalg.norm(p - q, axis=-1) / self.length)

    def to_dict(self):
        return {"type": self.type_name, "length": self.length, "dim": self.dim}


# ---------------------------------------------------------------------------
# Structural transforms


def _permute_axes(V, perm_tail):
    """Apply a permutation to the trailing ``len(perm_tail)`` axes of ``V``."""
    lead = V.ndim - len(perm_tail)
    return np.transpose(V, tuple(range(lead)) + tuple(lead + i for i in perm_tail))


@dataclass(frozen=True)
class Product(KernelSpec):
    """Product of kernels acting on disjoint groups of coordinate axes.

    ``factors`` is a sequence of ``(kernel, axes)`` pairs; together the axes
    must cover ``0..arity-1`` exactly once.
    """

    factors: tuple
    type_name = "product"

    def __post_init__(self):
        factors = tuple((k, tuple(int(a) for a in axes)) for k, axes in self.factors)
        if not factors:
            raise ValueError("product needs at least one factor")
        used = sorted(a for _, axes in factors for a in axes)
        if used != list(range(len(used))):
            raise ValueError("factor axes must partition 0..arity-1")
        for k, axes in factors:
            if k.arity != len(axes):
                raise ValueError("factor arity does not match its axes")
        object.__setattr__(self, "factors", factors)

    @property
    def arity(self):
        return sum(len(axes) for _, axes in self.factors)

    def _eval(self, p, q):
        out = 1.0
        for k, axes in self.factors:
            idx = list(axes)
            out = out * k._eval(p[..., idx], q[..., idx])
        return out

    def operator(self, src_axes, tgt_axes):
        self._check_axes(src_axes, tgt_axes)
        nd = self.arity
        steps = []
        for k, axes in self.factors:
            op = k.operator([src_axes[a] for a in axes], [tgt_axes[a] for a in axes])
            rest = [a for a in range(nd) if a not in axes]
            perm = rest + list(axes)
            steps.append((op, perm, np.argsort(perm)))

        def apply(V):
            for op, perm, inv in steps:
                V = _permute_axes(V, perm)
                V = op(V)
                V = _permute_axes(V, inv)
            return V

        return apply

    def to_dict(self):
        return {
            "type": self.type_name,
            "factors": [{"kernel": k.to_dict(), "axes": list(axes)} for k, axes in self.factors],
        }


def _swap_perm(arity, group_a, group_b):
    perm = list(range(arity))
    for a, b in zip(group_a, group_b):
        perm[a], perm[b] = b, a
    return perm


def _sample_pairs(arity, rng, n=100):
    p = rng.uniform(0.0, 1.0, size=(n, arity))
    near = p + rng.normal(scale=0.05, size=(n, arity))
    far = rng.uniform(0.0, 1.0, size=(n, arity))
    q = np.where(np.arange(n)[:, None] % 2 == 0, near, far)
    return p, q


@dataclass(frozen=True)
class Symmetrized(KernelSpec):
    """Four-term average of ``inner`` under swapping axis groups a <-> b.

    Reproducing kernel of the functions in the inner space that are invariant
    under the swap. Construction verifies on random points that
    ``K(sigma p, sigma q) == K(p, q)``, the sufficient condition for the
    symmetric subspace to be mapped into itself.
    """

    inner: KernelSpec
    group_a: tuple
    group_b: tuple
    check: bool = field(default=True, compare=False)
    type_name = "symmetrized"

    def __post_init__(self):
        ga = tuple(int(a) for a in self.group_a)
        gb = tuple(int(b) for b in self.group_b)
        if len(ga) != len(gb) or not ga:
            raise ValueError("swap groups must be nonempty and of equal length")
        if set(ga) & set(gb):
            raise ValueError("swap groups must be disjoint")
        if max(ga + gb) >= self.inner.arity or min(ga + gb) < 0:
            raise ValueError("swap axis out of range")
        object.__setattr__(self, "group_a", ga)
        object.__setattr__(self, "group_b", gb)
        object.__setattr__(self, "_perm", _swap_perm(self.inner.arity, ga, gb))
        if self.check:
            rng = np.random.default_rng(12345)
            p, q = _sample_pairs(self.arity, rng)
            k1 = self.inner(p, q)
            k2 = self.inner(p[:, self._perm], q[:, self._perm])
            scale = max(1.0, float(np.max(np.abs(k1))))
            if np.max(np.abs(k1 - k2)) > 1e-10 * scale:
                raise SymmetryConditionError(
                    "inner kernel violates K(x, y, xi, eta) = K(y, x, eta, xi); "
                    "the symmetrized kernel would not reproduce the symmetric subspace"
                )

    @property
    def arity(self):
        return self.inner.arity

    @property
    def swap(self):
        return list(self._perm)

    def _eval(self, p, q):
        sp = p[..., self._perm]
        sq = q[..., self._perm]
        k = self.inner._eval
        return 0.25 * (k(p, q) + k(p, sq) + k(sp, q) + k(sp, sq))

    def operator(self, src_axes, tgt_axes):
        self._check_axes(src_axes, tgt_axes)
        perm = self._perm
        swap_ok = all(
            np.array_equal(src_axes[a], src_axes[perm[a]])
            and np.array_equal(tgt_axes[a], tgt_axes[perm[a]])
            for a in range(self.arity)
        )
        if not swap_ok:
            return _dense_operator(self, src_axes, tgt_axes)
        inner = self.inner.operator(src_axes, tgt_axes)
        if self.check:
            # K(sigma p, sigma q) = K(p, q) collapses the four terms to two
            def apply(V):
                out = inner(V)
                return 0.5 * (out + _permute_axes(out, perm))

        else:

            def apply(V):
                a = inner(V)
                b = inner(_permute_axes(V, perm))
                return 0.25 * (a + b + _permute_axes(a, perm) + _permute_axes(b, perm))

        return apply

    def pairs(self):
        return list(zip(self.group_a, self.group_b))

    def to_dict(self):
        return {
            "type": self.type_name,
            "inner": self.inner.to_dict(),
            "group_a": list(self.group_a),
            "group_b": list(self.group_b),
        }


def _is_time_symmetrized(spec, t_axis, s_axis):
    while True:
        if isinstance(spec, Symmetrized):
            pairs = spec.pairs()
            if (t_axis, s_axis) in pairs or (s_axis, t_axis) in pairs:
                return True
            spec = spec.inner
        elif isinstance(spec, Causal):
            spec = spec.inner
        else:
            return False


@dataclass(frozen=True)
class Causal(KernelSpec):
    """Kernel restricted to causal (t <= s) or anticausal (t >= s) functions.

    ``inner`` must already be symmetrized in the (t, s) pair of axes.
    """

    inner: KernelSpec
    t_axis: int
    s_axis: int
    direction: str = "causal"
    type_name = "causal"

    def __post_init__(self):
        if self.direction not in ("causal", "anticausal"):
            raise ValueError("direction must be 'causal' or 'anticausal'")
        object.__setattr__(self, "t_axis", int(self.t_axis))
        object.__setattr__(self, "s_axis", int(self.s_axis))
        if not _is_time_symmetrized(self.inner, self.t_axis, self.s_axis):
            raise ValueError(
                "causal masking needs a kernel symmetrized in the (t, s) axes; "
                "apply symmetrize() first"
            )

    @property
    def arity(self):
        return self.inner.arity

    def indicator(self, t, s):
        if self.direction == "causal":
            return (t <= s).astype(np.float64)
        return (t >= s).astype(np.float64)

    def _eval(self, p, q):
        mp = self.indicator(p[..., self.t_axis], p[..., self.s_axis])
        mq = self.indicator(q[..., self.t_axis], q[..., self.s_axis])
        return mp * mq * self.inner._eval(p, q)

    def _mask(self, axes):
        shape = [1] * self.arity
        shape[self.t_axis] = -1
        t = np.asarray(axes[self.t_axis]).reshape(shape)
        shape = [1] * self.arity
        shape[self.s_axis] = -1
        s = np.asarray(axes[self.s_axis]).reshape(shape)
        return self.indicator(t, s)

    def operator(self, src_axes, tgt_axes):
        self._check_axes(src_axes, tgt_axes)
        inner = self.inner.operator(src_axes, tgt_axes)
        m_src = self._mask(src_axes)
        m_tgt = self._mask(tgt_axes)

        def apply(V):
            return inner(V * m_src) * m_tgt

        return apply

    def to_dict(self):
        return {
            "type": self.type_name,
            "inner": self.inner.to_dict(),
            "t_axis": self.t_axis,
            "s_axis": self.s_axis,
            "direction": self.direction,
        }


@dataclass(frozen=True)
class Convolutional(KernelSpec):
    """``K(x, y, xi, eta) = k(y - x, eta - xi)`` for a base kernel ``k`` on lags."""

    base: KernelSpec
    type_name = "convolutional"

    @property
    def dim(self):
        return self.base.arity

    @property
    def arity(self):
        return 2 * self.base.arity

    def _eval(self, p, q):
        d = self.dim
        return self.base._eval(p[..., d:] - p[..., :d], q[..., d:] - q[..., :d])

    def to_dict(self):
        return {"type": self.type_name, "base": self.base.to_dict()}


def symmetrize(spec, group_a, group_b):
    """Kernel of the swap-invariant subspace (see :class:`Symmetrized`)."""
    return Symmetrized(spec, tuple(group_a), tuple(group_b))


def causal_mask(spec, t_axis, s_axis, direction="causal"):
    return Causal(spec, t_axis, s_axis, direction)


def convolutional(base, dim_x=None, dim_y=None):
    """Convolutional kernel over ``D_X x D_Y``; requires ``dim_x == dim_y``."""
    if dim_x is not None and dim_y is not None and dim_x != dim_y:
        raise ValueError("convolutional kernels need equal input and output dimensions")
    if dim_x is not None and base.arity != dim_x:
        raise ValueError("base kernel arity must equal the domain dimension")
    return Convolutional(base)


# ---------------------------------------------------------------------------
# Serialization


def kernel_from_dict(data):
    """Build a kernel from its tagged-dict form (inverse of ``to_dict``)."""
    if isinstance(data, KernelSpec):
        return data
    data = dict(data)
    kind = data.pop("type")
    if kind == "gaussian":
        return Gaussian(tuple(data["variances"]))
    if kind == "sobolev1_dirichlet":
        return Sobolev1Dirichlet(data.get("n_terms", 200), data.get("dim", 2))
    if kind == "sobolev_m_tail":
        return SobolevTail(data.get("order", 1))
    if kind == "brownian_bridge_cov":
        return BrownianBridgeCov(data.get("variance", 1.0))
    if kind == "exponential_cov":
        return ExponentialCov(data.get("length", 0.1), data.get("dim", 1))
    if kind == "product":
        return Product(
            tuple((kernel_from_dict(f["kernel"]), tuple(f["axes"])) for f in data["factors"])
        )
    if kind == "symmetrized":
        return Symmetrized(kernel_from_dict(data["inner"]), data["group_a"], data["group_b"])
    if kind == "causal":
        return Causal(
            kernel_from_dict(data["inner"]),
            data["t_axis"],
            data["s_axis"],
            data.get("direction", "causal"),
        )
    if kind == "convolutional":
        return Convolutional(kernel_from_dict(data["base"]))
    raise ValueError(f"unknown kernel type {kind!r}")
