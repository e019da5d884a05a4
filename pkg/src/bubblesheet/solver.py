"""Explicit RK4 integration of the renormalized graph flow with diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import BlowUpError, ConfigurationError, DomainError
from .geometry import _curvature_parts, evolution_rhs
from .grid import CylinderGraph, TensorGrid
from .scenarios import ScenarioConfig, initial_deviation, quadratic_field, seed_matrix
from .spectral import GaussianQuadrature, ModeProjector, ModeState, theta_defect, truncate

SQRT2 = math.sqrt(2.0)
SQRT8 = math.sqrt(8.0)
MAX_CFL = 0.2


@dataclass
class FlowState:
    tau: float
    graph: CylinderGraph

    def __post_init__(self):
        if not math.isfinite(self.tau):
            raise ConfigurationError("tau must be finite")

    @property
    def grid(self) -> TensorGrid:
        return self.graph.grid

    @property
    def v(self) -> np.ndarray:
        return self.graph.values

    @property
    def u(self) -> np.ndarray:
        return self.graph.deviation


# --------------------------------------------------------------------------
# boundary policies


def _reflect_axis(v: np.ndarray, axis: int):
    n = v.shape[axis]
    idx = [slice(None)] * v.ndim

    def put(dst, src):
        idx_d = list(idx)
        idx_s = list(idx)
        idx_d[axis] = dst
        idx_s[axis] = src
        v[tuple(idx_d)] = v[tuple(idx_s)]

    put(1, 3)
    put(0, 4)
    put(n - 2, n - 4)
    put(n - 1, n - 5)


class NeumannBoundary:
    """Zero normal derivative: the outer two layers mirror the interior about
    the second-outermost interior node (even reflection)."""

    name = "neumann"

    def __init__(self, grid: TensorGrid):
        self.grid = grid

    def apply(self, v: np.ndarray, tau: float) -> np.ndarray:
        for a in range(self.grid.spec.k):
            _reflect_axis(v, a)
        return v


def alpha_matrix_at(A0: np.ndarray, tau0: float, tau: float) -> np.ndarray:
    """Exact solution A(tau) = A0 (I + sqrt(8) (tau - tau0) A0)^(-1) of A' = -sqrt(8) A^2."""
    M = np.eye(2) + SQRT8 * (tau - tau0) * A0
    return A0 @ np.linalg.inv(M)


class QuadraticDirichlet:
    """Outer two layers (and optionally everything beyond c sqrt|tau|) follow
    v = sqrt 2 + y^T A y - 2 tr A.

    With ``running=True`` A is the coefficient matrix (alpha_1, alpha_2,
    alpha_3) measured from the solution at the start of each step; otherwise
    A(tau) is the exact solution of the spectral ODE from the seed. Values are
    clipped from below at ``floor`` so the clamped far field never leaves the
    positive cone; only nodes outside the window can be clipped.
    """

    name = "quadratic_dirichlet"

    def __init__(self, grid: TensorGrid, A0, tau0: float, window: float | None = None,
                 floor: float = 0.2, running: bool = False):
        if grid.spec.k != 2:
            raise ConfigurationError("quadratic Dirichlet data is defined on R^2 x S^1 grids")
        self.grid = grid
        self.A0 = np.asarray(A0, dtype=float)
        self.tau0 = float(tau0)
        self.window = window
        self.floor = floor
        self._edge = grid.boundary_mask(2)
        y1, y2, _ = grid.coords()
        self._y1, self._y2 = y1, y2
        self._r = np.broadcast_to(grid.flat_radius(), grid.shape)
        self.running = running
        self._measured = None
        self._projector = ModeProjector(GaussianQuadrature.for_grid(grid)) if running else None

    def observe(self, v: np.ndarray, tau: float) -> None:
        """Record the running coefficient matrix from the current solution."""
        if self.running:
            self._measured = self._projector.coefficients(v - SQRT2, tau).alpha_matrix

    def matrix(self, tau: float) -> np.ndarray:
        if self.running and self._measured is not None:
            return self._measured
        return alpha_matrix_at(self.A0, self.tau0, tau)

    def mask(self, tau: float) -> np.ndarray:
        if self.window is None:
            return self._edge
        return self._edge | (self._r > self.window * math.sqrt(abs(tau)))

    def values(self, tau: float) -> np.ndarray:
        A = self.matrix(tau)
        return np.broadcast_to(SQRT2 + quadratic_field(A, self._y1, self._y2), self.grid.shape)

    def apply(self, v: np.ndarray, tau: float) -> np.ndarray:
        m = self.mask(tau)
        v[m] = np.maximum(self.values(tau)[m], self.floor)
        return v


def boundary_for(cfg: ScenarioConfig, grid: TensorGrid):
    if cfg.boundary == "neumann":
        return NeumannBoundary(grid)
    return QuadraticDirichlet(grid, seed_matrix(cfg), cfg.tau0, cfg.parabolic_window, cfg.window_floor,
                              running=cfg.boundary_data == "running")


class UnstableModulation:
    """Re-centering after each step: remove the H-projection of u onto the
    five unstable modes 1, y1, y2, cos, sin.

    These modes are the linearizations of a shift of the singular time and of
    translations in R^4, so removing them changes the blow-down center, not
    the shape. Without it any seeding error in them grows like e^(tau - tau0).
    """

    def __init__(self, grid: TensorGrid):
        self.projector = ModeProjector(GaussianQuadrature.for_grid(grid))
        self.base = grid.spec.base_radius

    def apply(self, v: np.ndarray, tau: float) -> np.ndarray:
        return self.base + self.projector.remove_unstable(v - self.base)


def modulation_for(cfg: ScenarioConfig, grid: TensorGrid):
    mode = cfg.modulation
    if mode == "auto":
        mode = "unstable" if cfg.scenario in ("rank2_seed", "rank1_seed", "rank1_rotated_seed") else "none"
    return UnstableModulation(grid) if mode == "unstable" else None


# --------------------------------------------------------------------------
# stepping


def cfl_limit(grid: TensorGrid, factor: float = MAX_CFL) -> float:
    """c * min(dy^2, (sqrt 2 dtheta)^2)."""
    return factor * min(grid.dy ** 2, 2.0 * grid.dtheta ** 2)


def _stage(grid, v, tau):
    try:
        return evolution_rhs(CylinderGraph(grid, v))
    except DomainError as exc:
        node = np.unravel_index(np.argmin(v), v.shape) if np.all(np.isfinite(v)) else None
        raise BlowUpError(f"graph radius lost positivity at tau={tau:.6g}: {exc}", tau=tau,
                          node=node, value=float(np.nanmin(v))) from None


def step(s: FlowState, dtau: float, boundary=None, cfl_factor: float = MAX_CFL) -> FlowState:
    """One classical RK4 step; boundary values are re-imposed after every stage."""
    if not dtau > 0:
        raise ConfigurationError(f"dtau must be positive, got {dtau} (backward flow is ill-posed)")
    if cfl_factor > MAX_CFL:
        raise ConfigurationError(f"CFL factor {cfl_factor} exceeds {MAX_CFL}")
    grid = s.grid
    lim = cfl_limit(grid, cfl_factor)
    if dtau > lim * (1 + 1e-12):
        raise ConfigurationError(f"dtau={dtau:.3e} violates the CFL bound {lim:.3e}")
    fix = (lambda w, t: boundary.apply(w, t)) if boundary is not None else (lambda w, t: w)
    t0 = s.tau
    v0 = s.v
    h = dtau
    k1 = _stage(grid, v0, t0)
    k2 = _stage(grid, fix(v0 + 0.5 * h * k1, t0 + 0.5 * h), t0 + 0.5 * h)
    k3 = _stage(grid, fix(v0 + 0.5 * h * k2, t0 + 0.5 * h), t0 + 0.5 * h)
    k4 = _stage(grid, fix(v0 + h * k3, t0 + h), t0 + h)
    v1 = fix(v0 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), t0 + h)
    bad = ~(v1 > 0)
    if bad.any():
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise BlowUpError(f"graph radius non-positive after step to tau={t0 + h:.6g} at node {node}",
                          tau=t0 + h, node=node, value=float(v1[node]))
    return FlowState(t0 + h, CylinderGraph(grid, v1))


# --------------------------------------------------------------------------
# Gaussian area


@dataclass
class GaussianArea:
    domain: float   # over the sampled box
    tail: float     # cylinder estimate for the complement of the box

    @property
    def total(self) -> float:
        return self.domain + self.tail


def _trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def gaussian_area(g: CylinderGraph) -> GaussianArea:
    """F = (4 pi)^(-n/2) \\int exp(-(|y|^2 + v^2)/4) |N| dy dtheta over the box, plus a cylinder tail."""
    grid = g.grid
    k = grid.spec.k
    n = grid.spec.n
    v = g.values
    _, N2, _, _ = _curvature_parts(grid, v)
    coords = grid.coords()
    r2 = sum(c ** 2 for c in coords[:-1])
    integrand = np.exp(-(r2 + v * v) / 4.0) * np.sqrt(N2)
    wy = _trapezoid_weights(grid.n_y, grid.dy)
    total = integrand
    for _ in range(k):
        total = np.tensordot(wy, total, axes=([0], [0]))
    norm = (4.0 * math.pi) ** (-n / 2.0)
    dom = norm * grid.dtheta * float(np.sum(total))
    r0 = grid.spec.base_radius
    line = 2.0 * math.sqrt(math.pi)  # \int_R exp(-y^2/4)
    inside = (line * erf(grid.R / 2.0)) ** k
    tail = norm * 2.0 * math.pi * r0 * math.exp(-r0 ** 2 / 4.0) * (line ** k - inside)
    return GaussianArea(dom, float(tail))


def cylinder_area(k: int = 2, m: int = 1) -> float:
    """F of the round cylinder R^k x S^1(sqrt 2): (4 pi)^(-n/2) 2 pi sqrt2 e^(-1/2) (4 pi)^(k/2)."""
    n = k + m
    return (4 * math.pi) ** (-n / 2) * 2 * math.pi * SQRT2 * math.exp(-0.5) * (4 * math.pi) ** (k / 2)


# --------------------------------------------------------------------------
# history


SPEC_COLUMNS = (["tau"] + [f"alpha{j}" for j in range(1, 8)]
                + ["Uplus", "U0", "Uminus", "S", "D", "x", "y", "F", "theta_defect"])


@dataclass
class FlowHistory:
    taus: list = field(default_factory=list)
    modes: list = field(default_factory=list)
    F: list = field(default_factory=list)
    theta_defects: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    F_tail: float = 0.0
    stride: int = 1
    dtau: float = 0.0
    partial: bool = False
    failure: str | None = None
    final_state: FlowState | None = None
    snapshots: dict = field(default_factory=dict)

    def record(self, tau: float, mode: ModeState, F: float, defect: float, extras: dict):
        if self.taus and not tau > self.taus[-1]:
            raise ConfigurationError("history times must increase strictly")
        self.taus.append(float(tau))
        self.modes.append(mode)
        self.F.append(float(F))
        self.theta_defects.append(float(defect))
        for key, val in extras.items():
            self.extras.setdefault(key, []).append(float(val))

    def __len__(self):
        return len(self.taus)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([m.alphas for m in self.modes]).reshape(-1, 7)

    @property
    def Uplus(self) -> np.ndarray:
        return np.array([m.Uplus for m in self.modes])

    @property
    def U0(self) -> np.ndarray:
        return np.array([m.U0 for m in self.modes])

    @property
    def Uminus(self) -> np.ndarray:
        return np.array([m.Uminus for m in self.modes])

    @property
    def l2_norms(self) -> np.ndarray:
        """Unnormalized truncated Gaussian L^2 norm of u, from U+ + U0 + U-."""
        return np.sqrt((4 * math.pi) ** 1.5 * (self.Uplus + self.U0 + self.Uminus))

    def columns(self) -> dict:
        """Ordered column name -> array, matching the history.csv schema."""
        t = np.asarray(self.taus)
        al = self.alphas
        S = al[:, 0] + al[:, 1]
        D = al[:, 0] * al[:, 1] - al[:, 2] ** 2
        cols = {"tau": t}
        for j in range(7):
            cols[f"alpha{j + 1}"] = al[:, j]
        cols.update(Uplus=self.Uplus, U0=self.U0, Uminus=self.Uminus, S=S, D=D,
                    x=SQRT2 * t * S, y=8.0 * t * t * D, F=np.asarray(self.F),
                    theta_defect=np.asarray(self.theta_defects))
        for key, vals in self.extras.items():
            cols[key] = np.asarray(vals)
        return cols


class Diagnostics:
    """Per-sample measurements: modes of the truncated deviation, F, theta-defect, probes."""

    def __init__(self, grid: TensorGrid, rho: float, probes: dict | None = None):
        self.grid = grid
        self.rho = rho
        self.projector = ModeProjector(GaussianQuadrature.for_grid(grid))
        self.radius = grid.flat_radius()
        self.probes = dict(probes or {})

    def measure(self, s: FlowState):
        uhat = truncate(s.u, self.rho, self.radius)
        mode = self.projector.coefficients(uhat, s.tau)
        area = gaussian_area(s.graph)
        defect = theta_defect(s.u, self.radius, self.rho)
        extras = {name: fn(s) for name, fn in self.probes.items()}
        return mode, area, defect, extras


def plan_steps(cfg: ScenarioConfig, grid: TensorGrid):
    """(dtau, steps per sample, number of samples) with a uniform sampling stride."""
    span = cfg.tau1 - cfg.tau0
    n_samples = max(1, int(round(span / cfg.sample_every)))
    dmax = cfg.dtau if cfg.dtau is not None else cfl_limit(grid, cfg.cfl_factor)
    if dmax > cfl_limit(grid, MAX_CFL) * (1 + 1e-12):
        raise ConfigurationError(f"dtau={dmax:.3e} violates the CFL bound {cfl_limit(grid):.3e}")
    per = max(1, int(math.ceil(span / n_samples / dmax)))
    return span / (n_samples * per), per, n_samples


def initial_state(cfg: ScenarioConfig, grid: TensorGrid | None = None) -> FlowState:
    grid = grid or cfg.grid.build()
    u0 = initial_deviation(cfg, grid)
    return FlowState(cfg.tau0, CylinderGraph.from_deviation(grid, u0))


def run(cfg: ScenarioConfig, probes: dict | None = None, snapshot_taus=(), progress=None) -> FlowHistory:
    """Integrate from tau0 to tau1 and record diagnostics every ``sample_every``.

    On blow-up the history is truncated at the last good sample and marked partial.
    ``snapshot_taus`` keeps copies of the deviation at the nearest sample times.
    """
    grid = cfg.grid.build()
    state = initial_state(cfg, grid)
    bc = boundary_for(cfg, grid)
    state = FlowState(state.tau, CylinderGraph(grid, bc.apply(state.v.copy(), state.tau)))
    mod = modulation_for(cfg, grid)
    observe = getattr(bc, "observe", None)
    dtau, per, n_samples = plan_steps(cfg, grid)
    diag = Diagnostics(grid, cfg.rho, probes)
    hist = FlowHistory(stride=per, dtau=dtau)
    hist.F_tail = gaussian_area(state.graph).tail
    want = sorted(snapshot_taus)

    def sample(st):
        mode, area, defect, extras = diag.measure(st)
        hist.record(st.tau, mode, area.domain, defect, extras)
        for t in want:
            if abs(st.tau - t) < 0.5 * per * dtau + 1e-12:
                hist.snapshots[t] = st.u.copy()

    sample(state)
    limit = cfl_limit(grid, MAX_CFL)
    i = 0
    try:
        for j in range(1, n_samples + 1):
            for _ in range(per):
                i += 1
                if observe is not None:
                    observe(state.v, state.tau)
                state = step(state, dtau, bc, cfl_factor=MAX_CFL if dtau <= limit else cfg.cfl_factor)
                if mod is not None:
                    state.graph.values[...] = bc.apply(mod.apply(state.v, state.tau), state.tau)
                # pin tau to the integer grid so runs are reproducible bit-for-bit
                state.tau = cfg.tau0 + i * dtau
            sample(state)
            if progress:
                progress(j, n_samples, state)
    except BlowUpError as exc:
        hist.partial = True
        hist.failure = str(exc)
    hist.final_state = state
    return hist
