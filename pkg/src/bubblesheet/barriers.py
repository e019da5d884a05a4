"""Shrinker-with-boundary profiles, rotated inner barriers and the bowl translator.

Shrinker profiles r = u(y) solve the stationary neck equation

    u'' / (1 + u'^2) - 1/u + (u - y u') / 2 = 0,

and are built from the tip: near u = 0 the inverse chart y = Y(u) is regular,

    Y'' = -(1 + Y'^2) [Y'/u - (u Y' - Y) / 2],   Y(0) = a, Y'(0) = 0,

with series Y = a - (a/8) u^2 - (a/256 + a^3/1024) u^4 + O(u^6). At u = 0.1
the chart is swapped and u(y) is integrated towards y = 0, which is the
decaying direction of the linearization (its growing mode is ~exp(y^2/4)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import InputError, SolverError
from .grid import CylinderGraph

SQRT2 = math.sqrt(2.0)
CHART_SWITCH = 0.1
TIP_START = 1e-4


def _tip_series(a, v):
    c2 = -a / 8.0
    c4 = -a / 256.0 - a ** 3 / 1024.0
    return a + c2 * v * v + c4 * v ** 4, 2 * c2 * v + 4 * c4 * v ** 3


def _inverse_rhs(v, s):
    Y, Yp = s
    return [Yp, -(1.0 + Yp * Yp) * (Yp / v - 0.5 * (v * Yp - Y))]


def _graph_rhs(y, s):
    u, up = s
    return [up, (1.0 + up * up) * (1.0 / u - 0.5 * (u - y * up))]


def shrinker_residual(y, u, up, upp):
    return upp / (1 + up * up) - 1.0 / u + 0.5 * (u - y * up)


@dataclass
class ShrinkerProfile:
    a: float
    r: np.ndarray = field(repr=False)          # samples on [0, a]
    u: np.ndarray = field(repr=False)
    tip_v: np.ndarray = field(repr=False)      # inverse chart samples
    tip_y: np.ndarray = field(repr=False)
    slope_at_zero: float                       # u'(0); even reflection needs 0
    y_switch: float
    _graph: object = field(repr=False, default=None)
    _tip: object = field(repr=False, default=None)

    def __call__(self, r):
        """u_a(r) for 0 <= r <= a (vectorized)."""
        r = np.asarray(r, dtype=float)
        if np.any(r < -1e-12) or np.any(r > self.a * (1 + 1e-12)):
            raise InputError(f"profile defined on [0, {self.a}]")
        out = np.empty(r.shape)
        flat = r.ravel()
        res = out.ravel()
        for i, x in enumerate(flat):
            if x <= self.y_switch:
                res[i] = self._graph.sol(max(x, 0.0))[0]
            elif x >= self.a:
                res[i] = 0.0
            else:
                res[i] = brentq(lambda v: self._tip.sol(v)[0] - x, 0.0, CHART_SWITCH, xtol=1e-15)
        return out

    def derivative(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if np.any(r > self.y_switch):
            raise InputError("derivative available on the graph chart only")
        return self._graph.sol(r)[1]

    def ode_residual(self, h: float = 5e-4) -> float:
        """Max geometric residual |H - <X, nu>/2| over interior samples of both charts.

        The second derivative comes from a fourth-order central difference of
        the dense first derivative (step ``h / (1 + u'^2)`` on the graph chart,
        ``h * min(1/10, 1/a)`` on the tip chart), independent of the integrator's own
        right-hand side.
        """
        # the tip chart varies on the scale 1/a
        return max(self._graph_residual(h), self._tip_residual(h * min(0.1, 1.0 / self.a)))

    def _graph_residual(self, h):
        ys = self.r[(self.r >= 2 * h) & (self.r <= self.y_switch - 2 * h)]
        if not ys.size:
            return 0.0
        f = self._graph.sol
        u, up = f(ys)
        # shrink the step where the profile steepens towards the chart switch
        hl = h / (1.0 + up * up)
        d = [f(np.clip(ys + k * hl, 0.0, self.y_switch))[1] for k in (-2, -1, 1, 2)]
        upp = (d[0] - 8 * d[1] + 8 * d[2] - d[3]) / (12 * hl)
        res = shrinker_residual(ys, u, up, upp) / np.sqrt(1 + up * up)
        return float(np.max(np.abs(res)))

    def _tip_residual(self, h):
        vs = self.tip_v[(self.tip_v >= TIP_START + 2 * h) & (self.tip_v <= CHART_SWITCH - 2 * h)]
        if not vs.size:
            return 0.0
        g = self._tip.sol
        Y, Yp = g(vs)
        d = [g(vs + k * h)[1] for k in (-2, -1, 1, 2)]
        Ypp = (d[0] - 8 * d[1] + 8 * d[2] - d[3]) / (12 * h)
        res = (Ypp / (1 + Yp * Yp) + Yp / vs - 0.5 * (vs * Yp - Y)) / np.sqrt(1 + Yp * Yp)
        return float(np.max(np.abs(res)))

    def second_differences(self) -> np.ndarray:
        return self.u[:-2] - 2 * self.u[1:-1] + self.u[2:]


def solve_shrinker(a: float, n_samples: int = 4001, rtol: float = 1e-13, atol: float = 1e-15,
                   min_a: float = 4.0) -> ShrinkerProfile:
    """Profile u_a with u_a(a) = 0, integrated from the tip towards y = 0."""
    if not a >= min_a:
        raise InputError(f"need a >= {min_a} (desk proxy for the foliation threshold), got {a}")
    Y0, Yp0 = _tip_series(a, TIP_START)
    tip = solve_ivp(_inverse_rhs, (TIP_START, CHART_SWITCH), [Y0, Yp0], method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True)
    if tip.status != 0:
        raise SolverError(f"tip chart integration failed: {tip.message}")
    Ysw, Ypsw = tip.y[:, -1]
    if not Ypsw < 0:
        raise SolverError(f"tip chart is not a graph at the switch (Y'={Ypsw})")

    _lo, _hi = TIP_START, CHART_SWITCH

    class _TipDense:
        # series below TIP_START, numerical solution above
        @staticmethod
        def sol(v):
            v = np.asarray(v, dtype=float)
            below = v < _lo
            vv = np.clip(v, _lo, _hi)
            out = np.array(tip.sol(vv))
            if np.any(below):
                Ys, Yps = _tip_series(a, v)
                out[0] = np.where(below, Ys, out[0])
                out[1] = np.where(below, Yps, out[1])
            return out

    graph = solve_ivp(_graph_rhs, (Ysw, 0.0), [CHART_SWITCH, 1.0 / Ypsw], method="DOP853",
                      rtol=rtol, atol=atol, dense_output=True)
    if graph.status != 0:
        raise SolverError(f"graph chart integration failed: {graph.message}")
    u0, up0 = graph.y[:, -1]
    r = np.linspace(0.0, a, n_samples)
    prof = ShrinkerProfile(a, r, np.empty_like(r), np.linspace(0.0, CHART_SWITCH, 401), np.empty(401),
                           float(up0), float(Ysw), graph, _TipDense)
    prof.tip_y = _TipDense.sol(prof.tip_v)[0]
    inside = r <= Ysw
    prof.u[inside] = graph.sol(r[inside])[0]
    # invert the tip chart by interpolating on a fine monotone table, then polish
    vv = np.linspace(0.0, CHART_SWITCH, 2001)
    YY = _TipDense.sol(vv)[0]
    for i in np.nonzero(~inside)[0]:
        x = r[i]
        if x >= a:
            prof.u[i] = 0.0
            continue
        j = np.searchsorted(-YY, -x)
        lo, hi = vv[max(j - 1, 0)], vv[min(j, vv.size - 1)]
        f = lambda v: _TipDense.sol(v)[0] - x  # noqa: E731
        if f(lo) * f(hi) > 0:
            lo, hi = 0.0, CHART_SWITCH
        prof.u[i] = brentq(f, lo, hi, xtol=1e-15)
    return prof


def axis_crosscheck(p: ShrinkerProfile, method: str = "Radau") -> float:
    """Re-integrate the graph chart forward from y = 0 with an implicit method,
    starting from the profile's own (u(0), u'(0)), and return the sup deviation
    from the stored samples on [0, y_switch].

    Forward integration amplifies errors like exp(y^2/4), so this is only a
    meaningful check for small a (roughly a <= 10).
    """
    sol = solve_ivp(_graph_rhs, (0.0, p.y_switch), [p.u[0], p.slope_at_zero], method=method,
                    rtol=1e-12, atol=1e-14, dense_output=True)
    if sol.status != 0:
        raise SolverError(f"axis re-integration failed: {sol.message}")
    inside = p.r <= p.y_switch
    return float(np.max(np.abs(sol.sol(p.r[inside])[0] - p.u[inside])))


def limit_profile(r, a):
    """sqrt(2 - 2 r^2 / a^2)."""
    return np.sqrt(np.maximum(2.0 - 2.0 * np.asarray(r) ** 2 / a ** 2, 0.0))


def limit_distance(p: ShrinkerProfile) -> float:
    return float(np.max(np.abs(p.u - limit_profile(p.r, p.a))))


@dataclass
class UpperBoundCheck:
    M_emp: float
    holds_everywhere: bool
    first_failure: float | None
    margin_at_zero: float


def check_ads_upper(p: ShrinkerProfile) -> UpperBoundCheck:
    """Largest sampled M with u_a(r) <= sqrt2 - (r^2 - 3)/(sqrt2 a^2) on [0, M]."""
    bound = SQRT2 - (p.r ** 2 - 3.0) / (SQRT2 * p.a ** 2)
    ok = p.u <= bound
    if ok.all():
        return UpperBoundCheck(float(p.r[-1]), True, None, float(bound[0] - p.u[0]))
    k = int(np.argmin(ok))
    M = float(p.r[k - 1]) if k > 0 else 0.0
    return UpperBoundCheck(M, False, float(p.r[k]), float(bound[0] - p.u[0]))


# --------------------------------------------------------------------------
# rotated barriers


@dataclass
class RotatedBarrier:
    """Gamma_a^eta in R^4: over flat radius r the circle radius is u_a(r + eta).

    At eta = 0 this is the rotated shrinker itself.
    """

    profile: ShrinkerProfile
    eta: float = 0.0

    def __post_init__(self):
        if self.eta < 0:
            raise InputError("eta must be nonnegative")

    @property
    def a(self):
        return self.profile.a

    def radius(self, r):
        return self.profile(np.asarray(r) + self.eta)

    @property
    def outer(self) -> float:
        return self.a - self.eta


@dataclass
class EnclosureVerdict:
    enclosed: bool
    min_clearance: float
    node: tuple | None
    n_nodes: int


def barrier_compare(g: CylinderGraph, b: RotatedBarrier, l0: float = 2.0) -> EnclosureVerdict:
    """Compare the graph radius against the barrier on L0 <= |y| <= min(a - eta, R)."""
    grid = g.grid
    if grid.spec.k != 2:
        raise InputError("barrier comparison needs an R^2 x S^1 graph")
    r_hi = min(b.outer, grid.R)
    if not l0 < r_hi:
        raise InputError(f"barrier annulus [{l0}, {r_hi}] is empty on this grid")
    rad = np.broadcast_to(grid.flat_radius(), grid.shape)
    mask = (rad >= l0) & (rad <= r_hi)
    rr = np.unique(rad[mask])
    table = dict(zip(rr.tolist(), b.radius(rr).tolist()))
    bvals = np.vectorize(table.__getitem__)(rad[mask])
    clear = g.values[mask] - bvals
    k = int(np.argmin(clear))
    node = tuple(int(i) for i in np.argwhere(mask)[k])
    return EnclosureVerdict(bool(np.all(clear > 0)), float(clear[k]), node, int(mask.sum()))


class BarrierProbe:
    """Cached min-clearance probe for repeated comparisons on one grid."""

    def __init__(self, grid, barrier: RotatedBarrier, l0: float = 2.0):
        r_hi = min(barrier.outer, grid.R)
        if not l0 < r_hi:
            raise InputError(f"barrier annulus [{l0}, {r_hi}] is empty on this grid")
        rad = np.broadcast_to(grid.flat_radius(), grid.shape)
        self.mask = (rad >= l0) & (rad <= r_hi)
        rr, inv = np.unique(rad[self.mask], return_inverse=True)
        self.values = barrier.radius(rr)[inv]

    def __call__(self, state) -> float:
        return float(np.min(state.v[self.mask] - self.values))


# --------------------------------------------------------------------------
# bowl translator


@dataclass
class BowlProfile:
    c: float
    r: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)
    hp: np.ndarray = field(repr=False)
    _sol: object = field(repr=False, default=None)
    r_start: float = 0.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        small = r < self.r_start
        out = np.asarray(self._sol.sol(np.clip(r, self.r_start, None))[0])
        return np.where(small, _bowl_series(self.c, r)[0], out)

    def slope(self, r):
        r = np.asarray(r, dtype=float)
        small = r < self.r_start
        out = np.asarray(self._sol.sol(np.clip(r, self.r_start, None))[1])
        return np.where(small, _bowl_series(self.c, r)[1], out)

    def ode_residual(self, r_lo: float = 0.05, r_hi: float | None = None, n: int = 400) -> float:
        """Max |h''/(1+h'^2) + h'/r - c| on sample points, with h'' from central
        differences of the slope (relative step 1e-4)."""
        r_hi = r_hi or float(self.r[-1]) * 0.99
        rs = np.geomspace(r_lo, r_hi, n)
        d = 1e-4 * rs
        w = self.slope
        wpp = (w(rs - 2 * d) - 8 * w(rs - d) + 8 * w(rs + d) - w(rs + 2 * d)) / (12 * d)
        hp = w(rs)
        return float(np.max(np.abs(wpp / (1 + hp * hp) + hp / rs - self.c)))


def _bowl_series(c, r):
    """h = c r^2/4 + c^3 r^4/128, h' = c r/2 + c^3 r^3/32."""
    return c * r * r / 4 + c ** 3 * r ** 4 / 128, c * r / 2 + c ** 3 * r ** 3 / 32


def solve_bowl(c: float, r_max: float = 1000.0, n_samples: int = 2001, rtol: float = 1e-13,
               atol: float = 1e-14) -> BowlProfile:
    """Rotationally symmetric translator h''/(1+h'^2) + h'/r = c with h(0) = h'(0) = 0."""
    if not c > 0:
        raise InputError(f"speed must be positive, got {c}")
    r0 = 1e-4 / c

    def rhs(r, s):
        w = s[1]
        return [w, (1 + w * w) * (c - w / r)]

    def jac(r, s):
        w = s[1]
        return [[0.0, 1.0], [0.0, 2 * w * (c - w / r) - (1 + w * w) / r]]

    h0, w0 = _bowl_series(c, r0)
    sol = solve_ivp(rhs, (r0, r_max), [h0, w0], method="Radau", jac=jac, rtol=rtol, atol=atol,
                    dense_output=True)
    if sol.status != 0:
        raise SolverError(f"bowl integration failed: {sol.message}")
    r = np.linspace(0.0, r_max, n_samples)
    p = BowlProfile(c, r, np.empty_like(r), np.empty_like(r), sol, r0)
    p.h = p(r)
    p.hp = p.slope(r)
    return p
