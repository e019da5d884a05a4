"""Gaussian Hilbert space on the bubble-sheet R^2 x S^1(sqrt 2).

    <f, g>_H = (4 pi)^(-3/2) \\int_Gamma f g exp(-|q|^2 / 4) dq

On Gamma, |q|^2 = |y|^2 + 2 and dq = sqrt(2) dy_1 dy_2 dtheta, so the inner
product is a weighted sum over a tensor rule in (y_1, y_2, theta). Two flat
rules are provided: Gauss-Hermite nodes (polynomially exact) and a composite
trapezoid rule on the uniform simulation grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc

from .errors import ConfigurationError, InputError
from .grid import TensorGrid, diff_theta

# (4 pi)^(-3/2) * exp(-1/2) * sqrt(2): the constant part of the weight on Gamma
GAMMA_PREFACTOR = (4.0 * np.pi) ** -1.5 * np.exp(-0.5) * np.sqrt(2.0)
# <1, 1>_H = sqrt(2 pi / e)
UNIT_NORM2 = np.sqrt(2.0 * np.pi / np.e)

UNSTABLE_NAMES = ("1", "y1", "y2", "cos", "sin")
NEUTRAL_NAMES = ("psi1", "psi2", "psi3", "psi4", "psi5", "psi6", "psi7")


def unstable_basis(y1, y2, th):
    """Eigenfunctions of L with eigenvalues 1, 1/2, 1/2, 1/2, 1/2."""
    one = np.ones(np.broadcast(y1, y2, th).shape)
    return [one, y1 + 0 * one, y2 + 0 * one, np.cos(th) + 0 * one, np.sin(th) + 0 * one]


def neutral_basis(y1, y2, th):
    """The seven eigenfunctions of L with eigenvalue 0 (psi_1 .. psi_7)."""
    zero = np.zeros(np.broadcast(y1, y2, th).shape)
    c, s = np.cos(th), np.sin(th)
    return [y1 ** 2 - 2 + zero, y2 ** 2 - 2 + zero, 2 * y1 * y2 + zero,
            y1 * c + zero, y1 * s + zero, y2 * c + zero, y2 * s + zero]


def _even_moment(d: int, R: float = math.inf) -> float:
    """\\int_{-R}^{R} y^d exp(-y^2/4) dy."""
    if d % 2:
        return 0.0
    full = 2.0 ** (d + 1) * math.gamma((d + 1) / 2.0)
    return full if math.isinf(R) else full * float(gammainc((d + 1) / 2.0, R * R / 4.0))


@dataclass(frozen=True)
class GaussianQuadrature:
    """Tensor quadrature realizing <., .>_H on samples over (y_1, y_2, theta).

    ``wy`` already contains the Gaussian factor exp(-y^2/4). ``exact_degree``
    is the flat polynomial degree integrated exactly (None for the grid rule,
    which is only accurate up to the box truncation).
    """

    y: np.ndarray = field(repr=False)
    wy: np.ndarray = field(repr=False)
    n_theta: int
    kind: str
    exact_degree: int | None

    def __post_init__(self):
        if np.any(self.wy < 0):
            raise ConfigurationError("quadrature weights must be nonnegative")
        self.self_test()

    # construction -----------------------------------------------------
    @classmethod
    def hermite(cls, n_flat: int = 8, n_theta: int = 8) -> "GaussianQuadrature":
        """Gauss-Hermite rule for exp(-y^2/4), exact through degree 2 n_flat - 1."""
        if n_flat < 1:
            raise ConfigurationError("need at least one flat node")
        x, w = np.polynomial.hermite.hermgauss(n_flat)
        return cls(2.0 * x, 2.0 * w, int(n_theta), "hermite", 2 * n_flat - 1)

    @classmethod
    def for_grid(cls, grid: TensorGrid) -> "GaussianQuadrature":
        """Composite trapezoid rule on the nodes of a simulation grid."""
        if grid.spec.k != 2:
            raise ConfigurationError("Gaussian quadrature is defined on R^2 x S^1 grids")
        y = grid.y
        w = np.full(y.size, grid.dy)
        w[0] = w[-1] = 0.5 * grid.dy
        return cls(y, w * np.exp(-y ** 2 / 4.0), grid.n_theta, "grid", None)

    def self_test(self):
        """Check flat monomial moments and angular exactness; raise if violated."""
        if self.exact_degree is not None:
            degrees, tol, R = range(0, self.exact_degree + 1), 1e-12, math.inf
        else:
            degrees, tol, R = range(0, 5), 1e-4, float(np.max(np.abs(self.y)))
        for d in degrees:
            got = float(np.sum(self.wy * self.y ** d))
            want = _even_moment(d, R)
            scale = _even_moment(d + (d % 2))
            if abs(got - want) > tol * scale:
                raise ConfigurationError(
                    f"{self.kind} rule fails moment of degree {d}: {got!r} vs {want!r}")
        th = self.theta
        for j in range(self.n_theta):
            got = float(np.sum(self.wtheta * np.cos(j * th)))
            want = 2.0 * np.pi if j == 0 else 0.0
            if abs(got - want) > 1e-12:
                raise ConfigurationError(f"angular rule fails trigonometric degree {j}")

    # geometry -----------------------------------------------------------
    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta

    @property
    def wtheta(self) -> np.ndarray:
        return np.full(self.n_theta, 2.0 * np.pi / self.n_theta)

    @property
    def shape(self) -> tuple:
        return (self.y.size, self.y.size, self.n_theta)

    @property
    def weights(self) -> np.ndarray:
        return GAMMA_PREFACTOR * (self.wy[:, None, None] * self.wy[None, :, None]
                                  * self.wtheta[None, None, :])

    def coords(self):
        return (self.y[:, None, None], self.y[None, :, None], self.theta[None, None, :])

    def flat_radius(self) -> np.ndarray:
        y1, y2, _ = self.coords()
        return np.sqrt(y1 ** 2 + y2 ** 2)

    def sample(self, func) -> np.ndarray:
        return np.broadcast_to(np.asarray(func(*self.coords()), dtype=float), self.shape).copy()

    # inner products -----------------------------------------------------
    def _check(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            try:
                f = np.broadcast_to(f, self.shape)
            except ValueError:
                raise ConfigurationError(
                    f"field of shape {f.shape} is not sampled on this rule {self.shape}") from None
        return f

    def inner(self, f, g) -> float:
        return float(np.sum(self.weights * self._check(f) * self._check(g)))

    def norm2(self, f) -> float:
        return self.inner(f, f)

    def reduced_prefactor(self) -> float:
        """Constant c with <f,g>_H = c \\int_{R^2} f g exp(-|y|^2/4) dy for theta-free f, g."""
        return GAMMA_PREFACTOR * float(np.sum(self.wtheta))


# --------------------------------------------------------------------------
# truncation


def cutoff(s):
    """Fixed cutoff chi: 1 on [0, 1/2], 0 on [1, inf), quintic smoothstep between.

    chi(s) = 1 - (6 t^5 - 15 t^4 + 10 t^3) with t = 2 s - 1 on (1/2, 1).
    """
    s = np.abs(np.asarray(s, dtype=float))
    t = np.clip(2.0 * s - 1.0, 0.0, 1.0)
    return 1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def truncate(u, rho: float, radius) -> np.ndarray:
    """u * chi(|y| / rho) where ``radius`` holds |(y_1, y_2)| at each node."""
    if not rho > 0:
        raise InputError(f"truncation radius must be positive, got {rho}")
    return np.asarray(u, dtype=float) * cutoff(np.asarray(radius) / rho)


# --------------------------------------------------------------------------
# projections


@dataclass
class ModeState:
    alphas: np.ndarray          # alpha_1 .. alpha_7
    Uplus: float
    U0: float
    Uminus: float
    norm2: float                # ||u_hat||_H^2
    tau: float | None = None

    @property
    def alpha_matrix(self) -> np.ndarray:
        a1, a2, a3 = self.alphas[:3]
        return np.array([[a1, a3], [a3, a2]])


class ModeProjector:
    """Precomputed eigenfunction samples and Gram matrices for one rule."""

    def __init__(self, quad: GaussianQuadrature):
        self.quad = quad
        c = quad.coords()
        self.unstable = [np.broadcast_to(f, quad.shape) for f in unstable_basis(*c)]
        self.neutral = [np.broadcast_to(f, quad.shape) for f in neutral_basis(*c)]
        W = quad.weights
        self._W = W
        self._wu = [W * f for f in self.unstable]
        self._wn = [W * f for f in self.neutral]
        self.neutral_norm2 = np.array([np.sum(w * f) for w, f in zip(self._wn, self.neutral)])
        self._gram_u = np.array([[np.sum(a * b) for b in self.unstable] for a in self._wu])
        self._gram_n = np.array([[np.sum(a * b) for b in self.neutral] for a in self._wn])

    def coefficients(self, uhat, tau=None) -> ModeState:
        uhat = self.quad._check(uhat)
        bu = np.array([np.sum(w * uhat) for w in self._wu])
        bn = np.array([np.sum(w * uhat) for w in self._wn])
        alphas = bn / self.neutral_norm2
        Up = float(bu @ np.linalg.solve(self._gram_u, bu))
        U0 = float(bn @ np.linalg.solve(self._gram_n, bn))
        n2 = float(np.sum(self._W * uhat * uhat))
        Um = max(n2 - Up - U0, 0.0)
        return ModeState(alphas, Up, U0, Um, n2, tau)

    def unstable_coefficients(self, u) -> np.ndarray:
        """Coefficients of the H-orthogonal projection of u onto span{1, y1, y2, cos, sin}."""
        u = self.quad._check(u)
        bu = np.array([np.sum(w * u) for w in self._wu])
        return np.linalg.solve(self._gram_u, bu)

    def remove_unstable(self, u) -> np.ndarray:
        c = self.unstable_coefficients(u)
        return np.asarray(u, dtype=float) - sum(cj * f for cj, f in zip(c, self.unstable))


def coefficients(uhat, quad: GaussianQuadrature, tau=None) -> ModeState:
    """Spectral coefficients alpha_j = <psi_j, u>/||psi_j||^2 and mode energies."""
    return ModeProjector(quad).coefficients(uhat, tau)


# --------------------------------------------------------------------------
# Merle-Zaag alternative as a classifier over measured energies


@dataclass
class DominanceVerdict:
    label: str                  # neutral-dominant | unstable-dominant | undetermined
    neutral_ratio: float        # max over window of (U+ + U-) / U0
    unstable_ratio: float       # max over window of (U0 + U-) / U+
    threshold: float
    window: int
    neutral_trend: float        # slope of log neutral ratio vs tau over the window


def _series(history, name):
    val = getattr(history, name, None)
    if val is None and isinstance(history, dict):
        val = history.get(name)
    if val is None:
        raise InputError(f"history lacks series {name!r}")
    return np.asarray(val, dtype=float)


def merle_zaag_classify(history, threshold: float = 0.2, window_fraction: float = 0.25,
                        min_samples: int = 10) -> DominanceVerdict:
    """Finite-horizon proxy for the neutral/unstable dichotomy.

    Uses the last ``window_fraction`` of the samples. Neutral dominance needs
    (U+ + U-)/U0 below ``threshold`` on the window and not growing towards
    tau -> -infinity (nonnegative log-slope in tau). Unstable dominance needs
    (U0 + U-)/U+ below ``threshold`` on the window.
    """
    taus = _series(history, "taus")
    Up, U0, Um = (_series(history, n) for n in ("Uplus", "U0", "Uminus"))
    if taus.size == 0:
        raise InputError("empty history")
    if taus.size < min_samples:
        raise InputError(f"need at least {min_samples} samples, got {taus.size}")
    w = max(2, int(math.ceil(window_fraction * taus.size)))
    sl = slice(taus.size - w, None)
    tiny = np.finfo(float).tiny
    nr = (Up[sl] + Um[sl]) / np.maximum(U0[sl], tiny)
    ur = (U0[sl] + Um[sl]) / np.maximum(Up[sl], tiny)
    logr = np.log(np.maximum(nr, tiny))
    slope = float(np.polyfit(taus[sl], logr, 1)[0]) if np.ptp(taus[sl]) > 0 else 0.0
    if np.all(nr < threshold) and slope >= 0.0:
        label = "neutral-dominant"
    elif np.all(ur < threshold):
        label = "unstable-dominant"
    else:
        label = "undetermined"
    return DominanceVerdict(label, float(nr.max()), float(ur.max()), threshold, w, slope)


# --------------------------------------------------------------------------
# graphical radius


def truncated_l2_norm(norm2_H) -> np.ndarray:
    """Unnormalized Gaussian L^2 norm (\\int u^2 chi^2 e^{-|q|^2/4})^(1/2) from ||u_hat||_H^2."""
    return np.sqrt((4.0 * np.pi) ** 1.5 * np.asarray(norm2_H, dtype=float))


def beta_and_radius(history, tau: float):
    """beta(tau) = sup over recorded sigma <= tau of the truncated norm; rho = beta^(-1/5).

    ``history`` must expose ``taus`` and ``l2_norms`` series.
    """
    taus = _series(history, "taus")
    norms = _series(history, "l2_norms")
    if taus.size == 0:
        raise InputError("empty history")
    if tau < taus[0]:
        raise InputError(f"tau={tau} precedes the recorded history (starts at {taus[0]})")
    beta = float(np.max(norms[taus <= tau]))
    rho = beta ** -0.2 if beta > 0 else math.inf
    return beta, rho


def theta_defect(u, radius, rho: float) -> float:
    """sup over |(y_1, y_2)| <= rho of |u_theta| (spectral angular derivative)."""
    (ut,) = diff_theta(np.asarray(u, dtype=float), (1,))
    mask = np.broadcast_to(np.asarray(radius) <= rho, ut.shape)
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(ut[mask])))
