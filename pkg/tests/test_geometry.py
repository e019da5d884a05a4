import math

import numpy as np
import pytest

from bubblesheet.errors import ConfigurationError, DomainError
from bubblesheet.geometry import (evolution_rhs, expansion_residual, mean_curvature, ou_apply,
                                  quadratic_form)
from bubblesheet.grid import (BUBBLE_SHEET, NECK, CylinderGraph, CylinderSpec, diff_flat,
                              diff_theta, make_grid)
from bubblesheet.spectral import GaussianQuadrature, neutral_basis, unstable_basis

SQRT2 = math.sqrt(2.0)


@pytest.fixture(scope="module")
def grid():
    return make_grid(6.0, 61, 16)


def test_round_bubble_sheet_is_stationary(grid):
    g = CylinderGraph.constant(grid, SQRT2)
    assert np.max(np.abs(evolution_rhs(g))) <= 1e-14


@pytest.mark.parametrize("c", [0.7, 1.0, 2.5])
def test_constant_radius_rhs(grid, c):
    g = CylinderGraph.constant(grid, c)
    np.testing.assert_allclose(evolution_rhs(g), -1.0 / c + c / 2, atol=1e-13)


@pytest.mark.parametrize("spec", [BUBBLE_SHEET, NECK])
@pytest.mark.parametrize("r", [0.5, 1.3, 4.0])
def test_cylinder_mean_curvature(spec, r):
    grid = make_grid(3.0, 21, 8, spec)
    H = mean_curvature(CylinderGraph.constant(grid, r))
    np.testing.assert_allclose(H, 1.0 / r, rtol=1e-12)


def test_unsupported_cylinder_rejected():
    with pytest.raises(ConfigurationError):
        CylinderSpec(3, 1)
    with pytest.raises(ConfigurationError):
        CylinderSpec(0, 1)


def test_nonpositive_radius_is_a_domain_error(grid):
    v = np.full(grid.shape, SQRT2)
    v[10, 10, 3] = -0.1
    with pytest.raises(DomainError):
        CylinderGraph(grid, v)
    with pytest.raises(DomainError):
        expansion_residual(grid, np.full(grid.shape, -2.0))


def test_ou_requires_bubble_sheet():
    with pytest.raises(ConfigurationError):
        ou_apply(make_grid(3.0, 21, 8, NECK), np.zeros((21, 8)))


def test_stencils_reproduce_quartics():
    grid = make_grid(2.0, 17, 4)
    y1, y2, _ = grid.coords()
    f = np.broadcast_to(y1 ** 4 - 3 * y1 ** 3 + y1 + 0 * y2, grid.shape)
    np.testing.assert_allclose(diff_flat(f, 0, grid.dy, 1),
                               np.broadcast_to(4 * y1 ** 3 - 9 * y1 ** 2 + 1 + 0 * y2, grid.shape),
                               atol=1e-10)
    np.testing.assert_allclose(diff_flat(f, 0, grid.dy, 2),
                               np.broadcast_to(12 * y1 ** 2 - 18 * y1 + 0 * y2, grid.shape), atol=1e-9)


def test_theta_derivatives_are_spectral():
    grid = make_grid(2.0, 7, 16)
    _, _, th = grid.coords()
    f = np.broadcast_to(np.sin(3 * th) + np.cos(5 * th), grid.shape)
    ft, ftt = diff_theta(f, (1, 2))
    np.testing.assert_allclose(ft, np.broadcast_to(3 * np.cos(3 * th) - 5 * np.sin(5 * th), grid.shape),
                               atol=1e-12)
    np.testing.assert_allclose(ftt, np.broadcast_to(-9 * np.sin(3 * th) - 25 * np.cos(5 * th), grid.shape),
                               atol=1e-11)


def test_ou_eigenfunctions(grid):
    coords = grid.coords()
    tol = 10 * grid.dy ** 2
    for f in neutral_basis(*coords):
        f = np.broadcast_to(f, grid.shape)
        assert np.max(np.abs(ou_apply(grid, f))) <= tol
    for lam, f in zip([1, 0.5, 0.5, 0.5, 0.5], unstable_basis(*coords)):
        f = np.broadcast_to(f, grid.shape)
        assert np.max(np.abs(ou_apply(grid, f) - lam * f)) <= tol


def test_quadratic_form_theta_free(grid):
    y1, y2, _ = grid.coords()
    f = np.broadcast_to(0.1 * (y1 ** 2 - 2) + 0.05 * y2, grid.shape)
    np.testing.assert_allclose(quadratic_form(grid, f), -f ** 2 / math.sqrt(8), atol=1e-15)
    assert np.all(quadratic_form(grid, np.zeros(grid.shape)) == 0)
    assert np.max(np.abs(expansion_residual(grid, np.zeros(grid.shape)))) <= 1e-14


def test_neutral_perturbation_rhs_is_quadratic(grid):
    # psi_1 is neutral, so the rhs at sqrt2 + eps psi_1 is O(eps^2) on |y| <= 4,
    # with leading coefficient max |Q(psi_1)| = max (y_1^2 - 2)^2 / sqrt8
    y1, _, _ = grid.coords()
    mask = np.broadcast_to(grid.flat_radius() <= 4, grid.shape)
    psi = np.broadcast_to(y1 ** 2 - 2, grid.shape)
    lead = np.max((psi ** 2)[mask]) / math.sqrt(8)
    vals = []
    for eps in (1e-3, 5e-4):
        g = CylinderGraph.from_deviation(grid, eps * psi)
        vals.append(np.max(np.abs(evolution_rhs(g)[mask])) / eps ** 2)
    assert vals[0] == pytest.approx(lead, rel=0.02)
    assert vals[1] / vals[0] == pytest.approx(1.0, rel=0.01)


def test_expansion_residual_is_cubic():
    grid = make_grid(8.0, 129, 16)
    quad = GaussianQuadrature.for_grid(grid)
    y1, y2, th = grid.coords()
    psi = neutral_basis(y1, y2, th)
    u0 = np.broadcast_to(0.1 * (psi[0] + psi[2] / 4 + 0.05 * y1 * np.cos(th)), grid.shape)
    eps = np.array([1e-1, 1e-2, 1e-3])
    norms = [math.sqrt(quad.norm2(expansion_residual(grid, e * u0))) for e in eps]
    order = np.polyfit(np.log(eps), np.log(norms), 1)[0]
    assert order >= 2.9


# ---------------------------------------------------------------------------
# independent curvature oracle: fundamental forms of the embedding
# X(y1, y2, theta) = (y1, y2, v cos theta, v sin theta)


def _embedding_curvature(grid, v):
    y1, y2, th = grid.coords()
    X = np.stack(np.broadcast_arrays(y1 + 0 * v, y2 + 0 * v, v * np.cos(th), v * np.sin(th)))
    h, dt = grid.dy, grid.dtheta

    def d(F, axis):
        if axis == 2:
            return (np.roll(F, -1, axis=axis + 1) - np.roll(F, 1, axis=axis + 1)) / (2 * dt)
        return np.gradient(F, h, axis=axis + 1)

    T = [d(X, a) for a in range(3)]
    S = [[d(T[a], b) for b in range(3)] for a in range(3)]
    M = np.stack(T, axis=0)                       # (3 tangents, 4 comps, ...)
    nu = np.empty_like(X)
    for i in range(4):
        cols = [j for j in range(4) if j != i]
        minor = np.moveaxis(M[:, cols], (0, 1), (-2, -1))
        nu[i] = (-1) ** i * np.linalg.det(minor)
    nu /= np.sqrt(np.sum(nu * nu, axis=0))
    outward = np.stack(np.broadcast_arrays(0 * v, 0 * v, np.cos(th) + 0 * v, np.sin(th) + 0 * v))
    nu *= np.sign(np.sum(nu * outward, axis=0))
    g = np.empty((3, 3) + v.shape)
    b = np.empty((3, 3) + v.shape)
    for a in range(3):
        for c in range(3):
            g[a, c] = np.sum(T[a] * T[c], axis=0)
            b[a, c] = np.sum(S[a][c] * nu, axis=0)
    ginv = np.moveaxis(np.linalg.inv(np.moveaxis(g, (0, 1), (-2, -1))), (-2, -1), (0, 1))
    H = -np.einsum("ab...,ab...->...", ginv, b)
    return H, nu, X


def _smooth_v(grid):
    y1, y2, th = grid.coords()
    return np.broadcast_to(SQRT2 + 0.3 * np.exp(-(y1 ** 2 + y2 ** 2) / 4) * (1 + 0.2 * np.cos(th))
                           + 0.05 * y1 * np.sin(th), grid.shape).copy()


def test_mean_curvature_matches_embedding_oracle_under_refinement():
    errs = []
    for n in (25, 49):
        grid = make_grid(3.0, n, 32)
        v = _smooth_v(grid)
        H = mean_curvature(CylinderGraph(grid, v))
        Ho, _, _ = _embedding_curvature(grid, v)
        mask = np.broadcast_to(grid.flat_radius() <= 2.0, grid.shape)
        errs.append(np.max(np.abs(H - Ho)[mask]))
    assert errs[1] < errs[0] / 3          # second-order oracle
    assert errs[1] < 5e-3


def test_evolution_is_normal_velocity_identity():
    grid = make_grid(3.0, 61, 32)
    v = _smooth_v(grid)
    g = CylinderGraph(grid, v)
    H = mean_curvature(g)
    _, nu, X = _embedding_curvature(grid, v)
    _, _, th = grid.coords()
    omega_nu = nu[2] * np.cos(th) + nu[3] * np.sin(th)
    lhs = evolution_rhs(g) * omega_nu
    rhs = -H + 0.5 * np.sum(X * nu, axis=0)
    mask = np.broadcast_to(grid.flat_radius() <= 2.0, grid.shape)
    assert np.max(np.abs(lhs - rhs)[mask]) < 2e-3
