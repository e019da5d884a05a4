"""Tensor grids over generalized cylinders and the derivative stencils on them.

A graph over R^k x S^1 is sampled on ``[-R, R]^k x [0, 2*pi)`` with ``N_y``
nodes per flat axis (endpoints included) and ``N_theta`` equispaced angles.
Arrays are laid out as ``(N_y,) * k + (N_theta,)``; the angle is always the
last axis.

Flat directions use fourth-order finite differences (centred in the interior,
one-sided at the two outermost layers); the angle uses trigonometric
(FFT) differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit

from .errors import ConfigurationError, DomainError

SQRT2 = np.sqrt(2.0)

# (k, m) instances the package knows how to handle.
SUPPORTED_CYLINDERS = {(2, 1), (1, 1)}


@dataclass(frozen=True)
class CylinderSpec:
    """Generalized cylinder R^k x S^m with base radius sqrt(2 m)."""

    k: int = 2
    m: int = 1

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise ConfigurationError(f"need k >= 1 and m >= 1, got k={self.k}, m={self.m}")
        if (self.k, self.m) not in SUPPORTED_CYLINDERS:
            raise ConfigurationError(
                f"unsupported cylinder (k={self.k}, m={self.m}); "
                f"supported: {sorted(SUPPORTED_CYLINDERS)}"
            )

    @property
    def n(self) -> int:
        return self.k + self.m

    @property
    def base_radius(self) -> float:
        return float(np.sqrt(2.0 * self.m))


BUBBLE_SHEET = CylinderSpec(2, 1)
NECK = CylinderSpec(1, 1)


@dataclass(frozen=True)
class TensorGrid:
    spec: CylinderSpec
    R: float
    n_y: int
    n_theta: int

    def __post_init__(self):
        if not self.R > 0:
            raise ConfigurationError(f"box half-width must be positive, got R={self.R}")
        if self.n_y < 6:
            raise ConfigurationError(f"need at least 6 nodes per flat axis, got {self.n_y}")
        if self.n_theta < 1:
            raise ConfigurationError(f"need at least one angular node, got {self.n_theta}")
        if self.n_theta > 1 and self.n_theta % 2:
            raise ConfigurationError(f"angular node count must be even, got {self.n_theta}")

    @property
    def y(self) -> np.ndarray:
        return np.linspace(-self.R, self.R, self.n_y)

    @property
    def dy(self) -> float:
        return 2.0 * self.R / (self.n_y - 1)

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta

    @property
    def dtheta(self) -> float:
        return 2.0 * np.pi / self.n_theta

    @property
    def shape(self) -> tuple:
        return (self.n_y,) * self.spec.k + (self.n_theta,)

    def coords(self):
        """Broadcastable coordinate arrays ``(y_1, ..., y_k, theta)``."""
        y = self.y
        k = self.spec.k
        out = []
        for a in range(k):
            s = [1] * (k + 1)
            s[a] = self.n_y
            out.append(y.reshape(s))
        s = [1] * (k + 1)
        s[k] = self.n_theta
        out.append(self.theta.reshape(s))
        return tuple(out)

    def flat_radius(self) -> np.ndarray:
        """|(y_1, .., y_k)| broadcast over the angle axis."""
        ys = self.coords()[:-1]
        r2 = sum(c ** 2 for c in ys)
        return np.sqrt(np.broadcast_to(r2, self.shape[:-1] + (1,)))

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(*coords)`` on the grid, broadcast to full shape."""
        return np.broadcast_to(np.asarray(func(*self.coords()), dtype=float), self.shape).copy()

    def boundary_mask(self, layers: int = 2) -> np.ndarray:
        """True on nodes within ``layers`` of the edge of the flat box."""
        mask = np.zeros(self.shape, dtype=bool)
        k = self.spec.k
        for a in range(k):
            idx = [slice(None)] * (k + 1)
            idx[a] = slice(0, layers)
            mask[tuple(idx)] = True
            idx[a] = slice(self.n_y - layers, None)
            mask[tuple(idx)] = True
        return mask


@dataclass
class CylinderGraph:
    """Positive graph radius ``v`` sampled over a :class:`TensorGrid`."""

    grid: TensorGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ConfigurationError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        check_positive(self.values)

    @property
    def spec(self) -> CylinderSpec:
        return self.grid.spec

    @property
    def deviation(self) -> np.ndarray:
        """u = v - base radius."""
        return self.values - self.spec.base_radius

    @classmethod
    def from_deviation(cls, grid: TensorGrid, u) -> "CylinderGraph":
        return cls(grid, grid.spec.base_radius + np.broadcast_to(u, grid.shape))

    @classmethod
    def constant(cls, grid: TensorGrid, radius: float) -> "CylinderGraph":
        return cls(grid, np.full(grid.shape, float(radius)))


def check_positive(v: np.ndarray):
    if not np.all(np.isfinite(v)):
        raise DomainError("graph radius is not finite")
    vmin = v.min()
    if vmin <= 0:
        node = np.unravel_index(np.argmin(v), v.shape)
        raise DomainError(f"graph radius must be positive; min {vmin:.3e} at node {node}")


def make_grid(R: float, n_y: int, n_theta: int, spec: CylinderSpec = BUBBLE_SHEET) -> TensorGrid:
    return TensorGrid(spec, float(R), int(n_y), int(n_theta))


# --------------------------------------------------------------------------
# finite differences along flat axes


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple, order: int) -> np.ndarray:
    """Weights w with sum_j w_j f(x + o_j h) = h**order f^(order)(x) + O(h^p)."""
    o = np.asarray(offsets, dtype=float)
    n = len(o)
    V = np.vander(o, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(V, rhs)


_CENTRAL = (-2, -1, 0, 1, 2)
_EDGE = {1: [(0, 1, 2, 3, 4), (-1, 0, 1, 2, 3)], 2: [(0, 1, 2, 3, 4, 5), (-1, 0, 1, 2, 3, 4)]}


@lru_cache(maxsize=64)
def stencil_table(n: int, order: int):
    """Per-node (start index, weights) for a fourth-order derivative on n nodes.

    Interior nodes use the centred five-point rule; the two outermost nodes on
    each side use one-sided rules. Rows are zero-padded to a common width with
    every padded read kept inside ``[0, n)``.
    """
    width = 5 if order == 1 else 6
    start = np.empty(n, dtype=np.int64)
    w = np.zeros((n, width))
    wc = fd_weights(_CENTRAL, order)
    for i in range(2, n - 2):
        if i - 2 + width <= n:
            start[i] = i - 2
            w[i, :5] = wc
        else:
            # pad on the left so every read stays inside the array
            start[i] = i - 2 - (width - 5)
            w[i, width - 5:] = wc
    sign = (-1.0) ** order
    for i, offs in enumerate(_EDGE[order]):
        we = fd_weights(offs, order)
        start[i] = i + offs[0]
        w[i, :len(offs)] = we
        # mirrored right edge: node n-1-i uses nodes n-1-i-offs
        start[n - 1 - i] = n - 1 - i - offs[-1] - (width - len(offs))
        w[n - 1 - i, width - len(offs):] = sign * we[::-1]
    return start, w


@njit(cache=True)
def _apply_stencil(f, start, w, out):
    pre, n, post = f.shape
    width = w.shape[1]
    for a in range(pre):
        for i in range(n):
            s = start[i]
            for b in range(post):
                acc = 0.0
                for p in range(width):
                    acc += w[i, p] * f[a, s + p, b]
                out[a, i, b] = acc


def diff_flat(f: np.ndarray, axis: int, h: float, order: int) -> np.ndarray:
    """Fourth-order accurate derivative of ``f`` along a non-periodic axis.

    Exact for polynomials of degree <= 4 (first derivative) and <= 5
    (second derivative) at every node.
    """
    f = np.ascontiguousarray(f, dtype=float)
    shape = f.shape
    n = shape[axis]
    pre = int(np.prod(shape[:axis], dtype=np.int64))
    post = int(np.prod(shape[axis + 1:], dtype=np.int64))
    start, w = stencil_table(n, order)
    out = np.empty((pre, n, post))
    _apply_stencil(f.reshape(pre, n, post), start, w / h ** order, out)
    return out.reshape(shape)


# --------------------------------------------------------------------------
# spectral differentiation along the angle


@lru_cache(maxsize=32)
def theta_diff_matrices(n: int):
    """Dense trigonometric differentiation matrices (first, second) on n angles.

    Row-vector convention: ``f @ D.T`` differentiates along the last axis.
    The Nyquist mode is dropped from the first derivative.
    """
    if n == 1:
        z = np.zeros((1, 1))
        return z, z
    eye = np.eye(n)
    fh = np.fft.rfft(eye, axis=-1)
    k = np.arange(n // 2 + 1, dtype=float)
    m1 = 1j * k
    m1[-1] = 0.0
    d1 = np.fft.irfft(fh * m1, n=n, axis=-1)
    d2 = np.fft.irfft(fh * (-(k ** 2)), n=n, axis=-1)
    # rows of eye transformed -> column j holds derivative of e_j; transpose to act as matrix
    return np.ascontiguousarray(d1.T), np.ascontiguousarray(d2.T)


def diff_theta(f: np.ndarray, orders=(1, 2)):
    """Trigonometric derivatives of ``f`` along the last axis.

    Returns a tuple with one array per requested order. The Nyquist mode is
    dropped for odd orders (its derivative is not representable).
    """
    d1, d2 = theta_diff_matrices(f.shape[-1])
    mats = {1: d1, 2: d2}
    f = np.asarray(f, dtype=float)
    return tuple(f @ mats[o].T for o in orders)
