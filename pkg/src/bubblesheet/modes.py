"""Spectral ODEs for the neutral coefficients and the (x, y) phase plane.

With A = [[a1, a3], [a3, a2]] the truncated system is A' = -sqrt(8) A^2.
Trace S and determinant D obey a closed Riccati system, and the rescaled
variables x = sqrt(2) tau S, y = 8 tau^2 D evolve autonomously in
sigma = -log(-tau) by (x, y)' = (2x^2 - x - y, 2xy - 2y).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import root

from .errors import DomainError, InputError, StiffnessError

SQRT2 = math.sqrt(2.0)
SQRT8 = math.sqrt(8.0)
QUANTUM = -1.0 / SQRT8
APRIORI_BOX = ((0.25, 1.5), (-0.25, 1.5))
SADDLE = (0.5, 0.0)
SOURCE = (1.0, 1.0)


@dataclass
class AlphaState:
    a1: float
    a2: float
    a3: float
    tau: float | None = None

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.a1, self.a2, self.a3)):
            raise DomainError("alpha coefficients must be finite")

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a1, self.a3], [self.a3, self.a2]])

    @classmethod
    def from_matrix(cls, A, tau=None) -> "AlphaState":
        return cls(float(A[0, 0]), float(A[1, 1]), float(A[0, 1]), tau)


def spectral_rhs(alpha) -> np.ndarray:
    """(-sqrt8 (a1^2 + a3^2), -sqrt8 (a2^2 + a3^2), -sqrt8 (a1 + a2) a3); last axis is (a1, a2, a3)."""
    if isinstance(alpha, AlphaState):
        alpha = alpha.vector
    a = np.asarray(alpha, dtype=float)
    a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2]
    return -SQRT8 * np.stack([a1 * a1 + a3 * a3, a2 * a2 + a3 * a3, (a1 + a2) * a3], axis=-1)


def trace_det(alpha):
    a = np.asarray(alpha.vector if isinstance(alpha, AlphaState) else alpha, dtype=float)
    return a[..., 0] + a[..., 1], a[..., 0] * a[..., 1] - a[..., 2] ** 2


def trace_det_rhs(S, D):
    """Closed Riccati system: S' = -sqrt8 (S^2 - 2D), D' = -sqrt8 S D."""
    return -SQRT8 * (S * S - 2 * D), -SQRT8 * S * D


@dataclass
class PhasePoint:
    x: float
    y: float
    sigma: float


def phase_point(alpha, tau: float) -> PhasePoint:
    """x = sqrt2 tau S, y = 8 tau^2 D, sigma = -log(-tau); requires tau < 0."""
    if not tau < 0:
        raise DomainError(f"phase variables need tau < 0, got {tau}")
    S, D = trace_det(alpha)
    return PhasePoint(float(SQRT2 * tau * S), float(8 * tau * tau * D), -math.log(-tau))


def phase_vector_field(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 2 * x * x - x - y, 2 * x * y - 2 * y


def phase_jacobian(x: float, y: float) -> np.ndarray:
    return np.array([[4 * x - 1, -1.0], [2 * y, 2 * x - 2]])


def _in_box(x, y, box=APRIORI_BOX):
    (x0, x1), (y0, y1) = box
    return x0 <= x <= x1 and y0 <= y <= y1


def fixed_points(box=APRIORI_BOX, density: int = 7, tol: float = 1e-12):
    """Zeros of V inside ``box``, found by Newton iteration from a seed lattice."""
    (x0, x1), (y0, y1) = box
    found = []
    for xs in np.linspace(x0, x1, density):
        for ys in np.linspace(y0, y1, density):
            sol = root(lambda p: np.array(phase_vector_field(p[0], p[1])), [xs, ys],
                       jac=lambda p: phase_jacobian(p[0], p[1]), tol=1e-14)
            if not sol.success:
                continue
            px, py = (float(c) for c in sol.x)
            if max(abs(c) for c in phase_vector_field(px, py)) > tol or not _in_box(px, py, box):
                continue
            if all(math.hypot(px - qx, py - qy) > 1e-8 for qx, qy in found):
                found.append((px, py))
    return sorted(found)


# --------------------------------------------------------------------------
# alpha trajectories


@dataclass
class ModeTrajectory:
    taus: np.ndarray
    alphas: np.ndarray          # (n, 3): a1, a2, a3

    @property
    def S(self):
        return self.alphas[:, 0] + self.alphas[:, 1]

    @property
    def D(self):
        return self.alphas[:, 0] * self.alphas[:, 1] - self.alphas[:, 2] ** 2

    @property
    def x(self):
        return SQRT2 * self.taus * self.S

    @property
    def y(self):
        return 8 * self.taus ** 2 * self.D

    @property
    def matrices(self) -> np.ndarray:
        a = self.alphas
        return np.stack([np.stack([a[:, 0], a[:, 2]], -1), np.stack([a[:, 2], a[:, 1]], -1)], -2)


def _noise_fn(delta: float, seed: int):
    """Bounded smooth perturbation delta/tau^2 * sin(w log|tau| + phase), one per component."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.5, 2.0, size=3)
    ph = rng.uniform(0.0, 2 * np.pi, size=3)

    def f(tau):
        return delta / (tau * tau) * np.sin(w * math.log(-tau) + ph)
    return f


def integrate_modes(s0, tau0: float, tau1: float, n_samples: int = 400, rtol: float = 1e-12,
                    atol: float | None = None, noise: float = 0.0, seed: int = 0) -> ModeTrajectory:
    """Integrate A' = -sqrt8 A^2 (+ optional noise) in tau with DOP853.

    Samples are spaced geometrically in |tau|. ``atol`` defaults to a value far
    below the scale of the data so the relative tolerance governs. Forward in
    tau the quantized states repel relative errors like |tau0 / tau|, hence
    the tight default ``rtol``. Data with an eigenvalue below 1/(sqrt8 tau0)
    reaches a finite-time singularity before tau1 and raises StiffnessError.
    """
    if not tau0 < tau1 < 0:
        raise InputError(f"need tau0 < tau1 < 0, got {tau0}, {tau1}")
    a0 = s0.vector if isinstance(s0, AlphaState) else np.asarray(s0, dtype=float)
    scale = max(float(np.max(np.abs(a0))), 1.0 / (SQRT8 * abs(tau0)))
    if atol is None:
        atol = 1e-15 * scale
    kick = _noise_fn(noise, seed) if noise else None

    def rhs(t, a):
        r = spectral_rhs(a)
        return r + kick(t) if kick is not None else r

    t_eval = -np.geomspace(-tau0, -tau1, n_samples)
    t_eval[0], t_eval[-1] = tau0, tau1
    sol = solve_ivp(rhs, (tau0, tau1), a0, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    if sol.status != 0:
        last = sol.y[:, -1] if sol.y.size else a0
        raise StiffnessError(f"mode integration failed: {sol.message}", last_state=last)
    return ModeTrajectory(sol.t, sol.y.T.copy())


# --------------------------------------------------------------------------
# quantization


@dataclass
class QuantizationMatrix:
    Q: np.ndarray | None
    raw: np.ndarray                 # trailing |tau| * A
    raw_eigs: np.ndarray
    snapped_eigs: np.ndarray | None
    snap_distances: np.ndarray
    rank: int | None
    settled: bool
    verdict: str                    # quantized | unsettled | unsnapped
    phi: float | None = None
    phi_series: np.ndarray | None = field(default=None, repr=False)
    phi_rate_bound: float | None = None   # max |dphi/dtau| |tau| over the window


def _principal_angle(vecs) -> np.ndarray:
    """phi with eigenvector +-(sin phi, cos phi), phi in (-pi/2, pi/2]."""
    phi = np.arctan2(vecs[..., 0], vecs[..., 1])
    phi = np.where(phi <= -np.pi / 2, phi + np.pi, phi)
    return np.where(phi > np.pi / 2, phi - np.pi, phi)


def classify_Q(traj, window: float = 0.25, settle_tol: float = 0.05,
               snap_tol: float = 0.02) -> QuantizationMatrix:
    """Read off Q from the trailing window of |tau| A(tau) and snap its eigenvalues.

    ``traj`` needs ``taus`` and either ``matrices`` or an (n, >=3) ``alphas`` array.
    """
    taus = np.asarray(traj.taus, dtype=float)
    if taus.size < 4:
        raise InputError("trajectory too short to classify")
    mats = getattr(traj, "matrices", None)
    if mats is None:
        a = np.asarray(traj.alphas)[:, :3]
        mats = np.stack([np.stack([a[:, 0], a[:, 2]], -1), np.stack([a[:, 2], a[:, 1]], -1)], -2)
    w = max(2, int(math.ceil(window * taus.size)))
    M = np.abs(taus[-w:])[:, None, None] * np.asarray(mats)[-w:]
    eig_series = np.linalg.eigvalsh(M)                       # ascending per sample
    floor = 0.05 * abs(QUANTUM)
    spread = eig_series.max(axis=0) - eig_series.min(axis=0)
    level = np.maximum(np.abs(eig_series).mean(axis=0), floor)
    settled = bool(np.all(spread / level < settle_tol))
    raw = M[-1]
    raw_eigs, vecs = np.linalg.eigh(raw)
    levels = np.array([0.0, QUANTUM])
    dist = np.abs(raw_eigs[:, None] - levels[None, :])
    snap_dist = dist.min(axis=1)
    if not settled:
        return QuantizationMatrix(None, raw, raw_eigs, None, snap_dist, None, False, "unsettled")
    if np.any(snap_dist > snap_tol):
        return QuantizationMatrix(None, raw, raw_eigs, None, snap_dist, None, True, "unsnapped")
    snapped = levels[dist.argmin(axis=1)]
    Q = vecs @ np.diag(snapped) @ vecs.T
    rank = int(np.count_nonzero(snapped))
    out = QuantizationMatrix(Q, raw, raw_eigs, snapped, snap_dist, rank, True, "quantized")
    if rank == 1:
        _, V = np.linalg.eigh(M)
        # eigh sorts ascending, so the -1/sqrt8 eigenvector comes first
        phis = np.unwrap(_principal_angle(V[:, :, 0]), period=np.pi)
        tw = taus[-w:]
        rate = np.abs(np.gradient(phis, tw)) * np.abs(tw) if w > 2 else np.zeros(w)
        out.phi = float(_principal_angle(vecs[:, 0]))
        out.phi_series = phis
        out.phi_rate_bound = float(rate.max())
    return out


# --------------------------------------------------------------------------
# phase plane: connector and reverse attempts


def _phase_rhs(sign):
    def f(s, p):
        vx, vy = phase_vector_field(p[0], p[1])
        return [sign * float(vx), sign * float(vy)]
    return f


@dataclass
class Attempt:
    start: tuple
    outcome: str        # exit-box | converge-saddle | reached-source | timeout
    closest_to_source: float


@dataclass
class SeparatrixReport:
    jacobian_saddle: np.ndarray
    jacobian_source: np.ndarray
    connector_error: float
    connector_reached: bool
    connector_sigma: float
    connector_path: np.ndarray = field(repr=False)
    attempts: list = field(default_factory=list, repr=False)

    @property
    def reverse_failures(self) -> int:
        return sum(a.outcome != "reached-source" for a in self.attempts)

    @property
    def passed(self) -> bool:
        return self.connector_reached and self.reverse_failures == len(self.attempts)


def _ball_event(center, radius):
    def ev(s, p):
        return math.hypot(p[0] - center[0], p[1] - center[1]) - radius
    ev.terminal = True
    ev.direction = -1
    return ev


def _exit_event(box):
    (x0, x1), (y0, y1) = box

    def ev(s, p):
        return min(p[0] - x0, x1 - p[0], p[1] - y0, y1 - p[1])
    ev.terminal = True
    ev.direction = -1
    return ev


def connector(eps: float = 1e-4, ball: float = 1e-3, sigma_max: float = 60.0, n_path: int = 200):
    """Forward-sigma orbit leaving (1,1) along (-1,-2)/sqrt5, stopped inside the ball around (1/2,0)."""
    d = np.array([-1.0, -2.0]) / math.sqrt(5.0)
    p0 = np.array(SOURCE) + eps * d
    sol = solve_ivp(_phase_rhs(1.0), (0.0, sigma_max), p0, method="DOP853", rtol=1e-10, atol=1e-13,
                    events=[_ball_event(SADDLE, ball)], dense_output=True)
    s_end = float(sol.t[-1])
    ss = np.linspace(0.0, s_end, n_path)
    path = sol.sol(ss).T
    end = path[-1]
    err = math.hypot(end[0] - SADDLE[0], end[1] - SADDLE[1])
    reached = bool(sol.t_events[0].size > 0) or err <= ball
    return path, err, reached, s_end


def reverse_attempts(n: int = 100, radius: float = 1e-2, ball: float = 1e-3,
                     sigma_max: float = 60.0, box=APRIORI_BOX):
    """Forward-sigma orbits from a circle around (1/2,0); none should enter the ball around (1,1)."""
    out = []
    for k in range(n):
        ang = 2 * math.pi * (k + 0.5) / n
        p0 = (SADDLE[0] + radius * math.cos(ang), SADDLE[1] + radius * math.sin(ang))
        sol = solve_ivp(_phase_rhs(1.0), (0.0, sigma_max), p0, method="DOP853", rtol=1e-9,
                        atol=1e-12, events=[_ball_event(SOURCE, ball), _exit_event(box)])
        d = np.hypot(sol.y[0] - SOURCE[0], sol.y[1] - SOURCE[1])
        if sol.t_events[0].size:
            outcome = "reached-source"
        elif sol.t_events[1].size:
            outcome = "exit-box"
        elif math.hypot(sol.y[0, -1] - SADDLE[0], sol.y[1, -1] - SADDLE[1]) < ball:
            outcome = "converge-saddle"
        else:
            outcome = "timeout"
        out.append(Attempt(p0, outcome, float(d.min())))
    return out


def separatrix_check(eps: float = 1e-4, n_reverse: int = 100, ball: float = 1e-3) -> SeparatrixReport:
    path, err, reached, s_end = connector(eps, ball)
    return SeparatrixReport(phase_jacobian(*SADDLE), phase_jacobian(*SOURCE), err, reached, s_end,
                            path, reverse_attempts(n_reverse, ball=ball))


def box_invariance_check(n: int = 5, sigma_span: float = 30.0, direction: float = -1.0,
                         start_box=((0.55, 0.95), (0.05, 0.95)), box=APRIORI_BOX):
    """Integrate from an n x n lattice in ``start_box`` and report how many stay in ``box``.

    ``direction = -1`` follows tau -> -infinity (decreasing sigma). Returns a
    list of (start, stayed_inside, final_point).
    """
    res = []
    for x0 in np.linspace(*start_box[0], n):
        for y0 in np.linspace(*start_box[1], n):
            sol = solve_ivp(_phase_rhs(direction), (0.0, sigma_span), [x0, y0], method="DOP853",
                            rtol=1e-9, atol=1e-12, events=[_exit_event(box)])
            res.append(((float(x0), float(y0)), sol.t_events[0].size == 0, tuple(sol.y[:, -1])))
    return res
