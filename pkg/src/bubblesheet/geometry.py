"""Renormalized mean curvature flow written as a graph over a cylinder.

For a hypersurface parametrized as ``(z, v(z, omega) omega)`` over
``R^k x S^m`` the graph radius evolves by

    dv/dtau = [A_ab d_a d_b v + B_ij grad_i grad_j v - 2 d_a v grad_i v grad_i d_a v
               - |grad v|^2 / v] / |N|^2  -  m / v  +  (v - z . dv) / 2

with ``|N|^2 = (1 + |dv|^2) v^2 + |grad v|^2`` and

    A_ab = |N|^2 delta_ab - v^2 d_a v d_b v,
    B_ij = (1 + |dv|^2 + |grad v|^2 / v^2) delta_ij - grad_i v grad_j v / v^2.

Only ``m = 1`` is sampled here, where the sphere factor is the unit circle
with angle ``theta`` and ``grad v = v_theta``; the B-contraction then
collapses to ``(1 + |dv|^2) v_thetatheta``.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .errors import ConfigurationError, DomainError
from .grid import (BUBBLE_SHEET, SQRT2, CylinderGraph, TensorGrid, check_positive, diff_flat,
                   diff_theta, stencil_table)

SQRT8 = np.sqrt(8.0)


@njit(cache=True, fastmath=True)
def _graph_kernel(v, d, vt, vtt, ya, yb, s1, w1, s2, w2, two_flat, m, quot, nsq, drift, rhs):
    """Fused evaluation of the graph equation on a (n_a, n_b, n_theta) block.

    Axis ``a`` is the first flat direction and is skipped when ``two_flat`` is
    False (then n_a == 1); axis ``b`` is always flat. Both flat axes share the
    stencil tables (s1, w1) / (s2, w2) for first / second derivatives.
    Flat derivatives are taken of ``d = v - const`` so that constant graphs
    have exactly vanishing derivatives.
    """
    na, nb, nt = v.shape
    W1 = w1.shape[1]
    W2 = w2.shape[1]
    dva = np.zeros((na, nb, nt))
    if two_flat:
        for i in range(na):
            for p in range(W1):
                c = w1[i, p]
                for j in range(nb):
                    for t in range(nt):
                        dva[i, j, t] += c * d[s1[i] + p, j, t]
    va = np.empty(nt)
    vat = np.empty(nt)
    vaa = np.empty(nt)
    vab = np.empty(nt)
    vb = np.empty(nt)
    vbt = np.empty(nt)
    vbb = np.empty(nt)
    for i in range(na):
        for j in range(nb):
            vb[:] = 0.0
            vbt[:] = 0.0
            vbb[:] = 0.0
            vab[:] = 0.0
            vat[:] = 0.0
            vaa[:] = 0.0
            for q in range(W1):
                c = w1[j, q]
                jj = s1[j] + q
                for t in range(nt):
                    vb[t] += c * d[i, jj, t]
                    vbt[t] += c * vt[i, jj, t]
                    vab[t] += c * dva[i, jj, t]
            for q in range(W2):
                c = w2[j, q]
                jj = s2[j] + q
                for t in range(nt):
                    vbb[t] += c * d[i, jj, t]
            if two_flat:
                for p in range(W1):
                    c = w1[i, p]
                    ii = s1[i] + p
                    for t in range(nt):
                        vat[t] += c * vt[ii, j, t]
                for p in range(W2):
                    c = w2[i, p]
                    ii = s2[i] + p
                    for t in range(nt):
                        vaa[t] += c * d[ii, j, t]
            for t in range(nt):
                a1 = dva[i, j, t]
                b1 = vb[t]
                vv = v[i, j, t]
                th = vt[i, j, t]
                grad2 = a1 * a1 + b1 * b1
                v2 = vv * vv
                t2 = th * th
                N2 = (1.0 + grad2) * v2 + t2
                num = N2 * (vaa[t] + vbb[t])
                num -= v2 * (a1 * a1 * vaa[t] + 2.0 * a1 * b1 * vab[t] + b1 * b1 * vbb[t])
                num += (1.0 + grad2) * vtt[i, j, t]
                num -= 2.0 * th * (a1 * vat[t] + b1 * vbt[t])
                num -= t2 / vv
                q = num / N2
                dr = ya[i] * a1 + yb[j] * b1
                quot[i, j, t] = q
                nsq[i, j, t] = N2
                drift[i, j, t] = dr
                rhs[i, j, t] = q - m / vv + 0.5 * (vv - dr)


def _curvature_parts(grid: TensorGrid, v: np.ndarray):
    """Return (quotient term, |N|^2, z . dv, d(tau) v) of the graph equation.

    The quotient is the bracketed second-order expression divided by |N|^2.
    """
    check_positive(v)
    k = grid.spec.k
    n = grid.n_y
    h = grid.dy
    shape3 = (n, n, grid.n_theta) if k == 2 else (1, n, grid.n_theta)
    v3 = np.ascontiguousarray(v, dtype=float).reshape(shape3)
    d3 = v3 - grid.spec.base_radius
    vt, vtt = diff_theta(d3, (1, 2))
    s1, w1 = stencil_table(n, 1)
    s2, w2 = stencil_table(n, 2)
    w1 = w1 / h
    w2 = w2 / h ** 2
    y = grid.y
    ya = y if k == 2 else np.zeros(1)
    quot = np.empty(shape3)
    nsq = np.empty(shape3)
    drift = np.empty(shape3)
    rhs = np.empty(shape3)
    # |N| >= v > 0, so the divisions in the kernel are safe.
    _graph_kernel(v3, d3, np.ascontiguousarray(vt), np.ascontiguousarray(vtt), ya, y,
                  s1, w1, s2, w2, k == 2, float(grid.spec.m), quot, nsq, drift, rhs)
    shape = grid.shape
    return quot.reshape(shape), nsq.reshape(shape), drift.reshape(shape), rhs.reshape(shape)


def evolution_rhs(g: CylinderGraph) -> np.ndarray:
    """Pointwise d(tau) v of the renormalized flow for the sampled graph ``g``."""
    return _curvature_parts(g.grid, g.values)[3]


def mean_curvature(g: CylinderGraph) -> np.ndarray:
    """Scalar mean curvature H (outward normal; the round cylinder has H = 1/r)."""
    v = g.values
    quot, N2, _, _ = _curvature_parts(g.grid, v)
    return -(v / np.sqrt(N2)) * (quot - g.spec.m / v)


def normal_factor(g: CylinderGraph) -> np.ndarray:
    """|N| = sqrt((1+|dv|^2) v^2 + v_theta^2); also the area density of the graph."""
    _, N2, _, _ = _curvature_parts(g.grid, g.values)
    return np.sqrt(N2)


def _require_bubble_sheet(grid: TensorGrid):
    if grid.spec != BUBBLE_SHEET:
        raise ConfigurationError(f"operation defined on R^2 x S^1 only, got {grid.spec}")


def ou_apply(grid: TensorGrid, u: np.ndarray) -> np.ndarray:
    """Linearization at the round bubble-sheet:
    u_11 - y_1 u_1 / 2 + u_22 - y_2 u_2 / 2 + u_thetatheta / 2 + u."""
    _require_bubble_sheet(grid)
    u = np.asarray(u, dtype=float)
    h = grid.dy
    y1, y2, _ = grid.coords()
    (utt,) = diff_theta(u, (2,))
    return (diff_flat(u, 0, h, 2) - 0.5 * y1 * diff_flat(u, 0, h, 1)
            + diff_flat(u, 1, h, 2) - 0.5 * y2 * diff_flat(u, 1, h, 1)
            + 0.5 * utt + u)


def quadratic_form(grid: TensorGrid, u: np.ndarray) -> np.ndarray:
    """Quadratic part of the bubble-sheet equation:
    -u^2/sqrt(8) - u_theta^2/sqrt(8) - u u_thetatheta / sqrt(2)."""
    _require_bubble_sheet(grid)
    u = np.asarray(u, dtype=float)
    ut, utt = diff_theta(u, (1, 2))
    return -(u * u) / SQRT8 - (ut * ut) / SQRT8 - u * utt / SQRT2


def expansion_residual(grid: TensorGrid, u: np.ndarray) -> np.ndarray:
    """evolution_rhs(sqrt(2) + u) - L u - Q(u): the cubic-and-higher remainder."""
    _require_bubble_sheet(grid)
    u = np.broadcast_to(np.asarray(u, dtype=float), grid.shape)
    if np.min(SQRT2 + u) <= 0:
        raise DomainError("sqrt(2) + u must stay positive")
    g = CylinderGraph.from_deviation(grid, u)
    return evolution_rhs(g) - ou_apply(grid, u) - quadratic_form(grid, u)
