"""Scenario configuration and initial data.

A scenario is a JSON-serializable record describing the time window, grid,
step control, boundary policy and seed for one flow experiment. Seeds are
built so that ``tau * u`` matches ``y^T (-Q) y - 2 tr(-Q)`` for the intended
matrix Q, i.e. the graph bends inward away from the origin.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigurationError, DomainError
from .grid import BUBBLE_SHEET, TensorGrid, make_grid
from .spectral import NEUTRAL_NAMES, UNSTABLE_NAMES, neutral_basis, unstable_basis

SCENARIOS = ("cylinder", "rank2_seed", "rank1_seed", "rank1_rotated_seed", "unstable_seed", "custom")
BOUNDARY_POLICIES = ("quadratic_dirichlet", "neumann")
MODULATIONS = ("auto", "unstable", "none")
BOUNDARY_DATA = ("running", "ode")
SQRT8 = math.sqrt(8.0)


@dataclass
class GridConfig:
    R: float = 8.0
    n_y: int = 96
    n_theta: int = 32

    def build(self) -> TensorGrid:
        return make_grid(self.R, self.n_y, self.n_theta, BUBBLE_SHEET)


@dataclass
class Tolerances:
    alpha_rel: float = 0.10          # |alpha_1,2 * sqrt(8) tau - 1|
    alpha3_abs: float = 1e-3
    parabolic: float = 0.1           # sup |tau u - (|y|^2-4)/sqrt 8| at the check time
    parabolic_radius: float = 4.0
    intermediate: float = 0.15
    intermediate_z2: float = 1.0
    f_slack: float = 1e-8
    growth_rate: float = 0.5
    growth_tol: float = 0.1
    angle_deg: float = 2.0
    theta_defect: float = 1e-10


@dataclass
class ScenarioConfig:
    scenario: str = "rank2_seed"
    tau0: float = -200.0
    tau1: float = -180.0
    grid: GridConfig = field(default_factory=GridConfig)
    dtau: float | None = None
    cfl_factor: float = 0.12
    boundary: str = "quadratic_dirichlet"
    boundary_data: str = "running"          # running | ode: source of the quadratic Dirichlet matrix
    modulation: str = "auto"                # auto | unstable | none (see solver.UnstableModulation)
    parabolic_window: float | None = None   # also clamp nodes with |y| > c sqrt|tau|
    window_floor: float = 0.2
    perturbation: dict = field(default_factory=dict)  # basis name -> coefficient (times amplitude)
    amplitude: float = 1.0
    rotation: float = 0.0                   # phi_0 for rank1_rotated_seed (radians)
    sample_every: float = 0.5
    truncation_radius: float | None = None  # default 2R
    seed: int = 0
    noise: float = 0.0                      # amplitude of seeded smooth noise in u_0
    barrier_a: float | None = None
    barrier_eta: float = 0.0
    barrier_l0: float = 2.0
    intermediate_checkpoints: list = field(default_factory=list)
    parabolic_check_tau: float | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    validators: list | None = None          # names of checks to enable; None enables all applicable
    output_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = GridConfig(**self.grid)
        if isinstance(self.tolerances, dict):
            self.tolerances = Tolerances(**self.tolerances)
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if not (self.tau0 < self.tau1 < 0):
            raise ConfigurationError(f"need tau0 < tau1 < 0, got {self.tau0}, {self.tau1}")
        if self.boundary not in BOUNDARY_POLICIES:
            raise ConfigurationError(f"unknown boundary policy {self.boundary!r}")
        if self.boundary_data not in BOUNDARY_DATA:
            raise ConfigurationError(f"unknown boundary_data {self.boundary_data!r}; choose from {BOUNDARY_DATA}")
        if self.modulation not in MODULATIONS:
            raise ConfigurationError(f"unknown modulation {self.modulation!r}; choose from {MODULATIONS}")
        if self.dtau is not None and not self.dtau > 0:
            raise ConfigurationError("dtau must be positive (the flow is not reversible)")
        if not 0 < self.cfl_factor <= 0.2:
            raise ConfigurationError(f"cfl_factor must lie in (0, 0.2], got {self.cfl_factor}")
        if not self.sample_every > 0:
            raise ConfigurationError("sample_every must be positive")
        known = set(NEUTRAL_NAMES) | set(UNSTABLE_NAMES)
        bad = set(self.perturbation) - known
        if bad:
            raise ConfigurationError(f"unknown perturbation modes {sorted(bad)}; known {sorted(known)}")

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ConfigurationError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @property
    def rho(self) -> float:
        return self.truncation_radius if self.truncation_radius else 2.0 * self.grid.R


def rotation_matrix(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def seed_matrix(cfg: ScenarioConfig) -> np.ndarray:
    """alpha-matrix [[a1, a3], [a3, a2]] of the quadratic part of u_0."""
    lam = 1.0 / (SQRT8 * cfg.tau0)
    name = cfg.scenario
    if name == "rank2_seed":
        return lam * np.eye(2)
    if name == "rank1_seed":
        return np.diag([0.0, lam])
    if name == "rank1_rotated_seed":
        # nonzero eigenvector (sin phi, cos phi): the y_2 axis turned by -phi
        Rm = rotation_matrix(cfg.rotation)
        return Rm.T @ np.diag([0.0, lam]) @ Rm
    if name == "custom":
        p = cfg.perturbation
        a1 = cfg.amplitude * p.get("psi1", 0.0)
        a2 = cfg.amplitude * p.get("psi2", 0.0)
        a3 = cfg.amplitude * p.get("psi3", 0.0)
        return np.array([[a1, a3], [a3, a2]])
    return np.zeros((2, 2))


def quadratic_field(A: np.ndarray, y1, y2):
    """y^T A y - 2 tr A."""
    return A[0, 0] * (y1 ** 2 - 2) + A[1, 1] * (y2 ** 2 - 2) + 2 * A[0, 1] * y1 * y2


def _smooth_noise(grid: TensorGrid, seed: int) -> np.ndarray:
    """Deterministic smooth pseudo-random field: a few low Hermite-like modes times a Gaussian."""
    rng = np.random.default_rng(seed)
    y1, y2, th = grid.coords()
    out = np.zeros(grid.shape)
    for _ in range(6):
        p, q, m = rng.integers(0, 3, size=3)
        c = rng.normal()
        ph = rng.uniform(0, 2 * np.pi)
        out += c * (y1 ** p) * (y2 ** q) * np.cos(m * th + ph) * np.exp(-(y1 ** 2 + y2 ** 2) / 16)
    return out / max(np.max(np.abs(out)), 1e-300)


def initial_deviation(cfg: ScenarioConfig, grid: TensorGrid) -> np.ndarray:
    y1, y2, th = grid.coords()
    u = np.broadcast_to(quadratic_field(seed_matrix(cfg), y1, y2), grid.shape).astype(float)
    if cfg.scenario == "unstable_seed":
        u = u + cfg.amplitude * np.broadcast_to(y1, grid.shape)
    basis = dict(zip(UNSTABLE_NAMES, unstable_basis(y1, y2, th)))
    basis.update(zip(NEUTRAL_NAMES, neutral_basis(y1, y2, th)))
    for name, c in cfg.perturbation.items():
        if cfg.scenario == "custom" and name in ("psi1", "psi2", "psi3"):
            continue  # already carried by seed_matrix
        u = u + cfg.amplitude * c * basis[name]
    if cfg.noise:
        u = u + cfg.noise * _smooth_noise(grid, cfg.seed)
    vmin = float(np.min(grid.spec.base_radius + u))
    if vmin <= 0:
        raise DomainError(f"initial data not positive (min radius {vmin:.3e}); reduce amplitude or R")
    return u
