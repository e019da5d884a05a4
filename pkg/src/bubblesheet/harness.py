"""Experiment orchestration, asymptotic-regime validators and data emission.

A run writes ``history.csv`` (fixed column schema plus probe columns) and
``report.json``. The report is always recomputed from the CSV as read back
from disk, so every number in it is traceable to a history row.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .barriers import BarrierProbe, RotatedBarrier, solve_bowl, solve_shrinker
from .errors import InputError
from .modes import (APRIORI_BOX, ModeTrajectory, box_invariance_check, classify_Q, connector,
                    phase_vector_field)
from .scenarios import ScenarioConfig
from .solver import SPEC_COLUMNS, FlowHistory, boundary_for, run
from .spectral import merle_zaag_classify

SQRT2 = math.sqrt(2.0)
SQRT8 = math.sqrt(8.0)
EXPECTED_RANK = {"cylinder": 0, "rank2_seed": 2, "rank1_seed": 1, "rank1_rotated_seed": 1}


# --------------------------------------------------------------------------
# pointwise measurements used as run probes


def parabolic_error(u, radius, tau: float, r_check: float = 4.0) -> float:
    """sup over |y| <= r_check of |tau u - (|y|^2 - 4)/sqrt8|."""
    radius = np.broadcast_to(radius, np.shape(u))
    mask = radius <= r_check
    if not mask.any():
        raise InputError(f"no nodes within |y| <= {r_check}")
    ref = (radius[mask] ** 2 - 4.0) / SQRT8
    return float(np.max(np.abs(tau * np.asarray(u)[mask] - ref)))


def intermediate_deviation(u, radius, tau: float, z2_max: float = 1.0, clamped=None):
    """(sup deviation, full coverage) of sqrt2 + u(|tau|^(1/2) z) against sqrt(2 - |z|^2) on |z|^2 <= z2_max.

    Nodes flagged in ``clamped`` (boundary data, not solution) are skipped; the
    coverage flag is False when any of them falls inside the z-set.
    """
    u = np.asarray(u, dtype=float)
    radius = np.broadcast_to(radius, u.shape)
    z2 = radius ** 2 / abs(tau)
    inside = z2 <= z2_max * (1 + 1e-12)
    mask = inside if clamped is None else inside & ~clamped
    if not mask.any():
        raise InputError("no free nodes in the requested z-set")
    dev = np.abs(SQRT2 + u[mask] - np.sqrt(np.maximum(2.0 - z2[mask], 0.0)))
    return float(dev.max()), bool(mask.sum() == inside.sum())


def make_probes(cfg: ScenarioConfig, grid) -> dict:
    """Named per-sample probes; each becomes an extra history column."""
    radius = grid.flat_radius()
    tol = cfg.tolerances
    probes = {}
    if cfg.scenario in ("rank2_seed", "rank1_seed", "rank1_rotated_seed"):
        probes["parabolic_err"] = lambda s: parabolic_error(s.u, radius, s.tau, tol.parabolic_radius)
    if cfg.intermediate_checkpoints:
        bc = boundary_for(cfg, grid)

        def inter(s, i):
            clamped = bc.mask(s.tau) if hasattr(bc, "mask") else grid.boundary_mask(2)
            return intermediate_deviation(s.u, radius, s.tau, tol.intermediate_z2, clamped)[i]
        probes["intermediate_dev"] = lambda s: inter(s, 0)
        probes["intermediate_full"] = lambda s: float(inter(s, 1))
    if cfg.barrier_a is not None:
        barrier = RotatedBarrier(solve_shrinker(cfg.barrier_a), cfg.barrier_eta)
        probes["barrier_clearance"] = BarrierProbe(grid, barrier, cfg.barrier_l0)
    return probes


# --------------------------------------------------------------------------
# CSV round trip


def write_history_csv(cols: dict, path) -> None:
    """Deterministic CSV: fixed column order, repr-exact floats."""
    names = list(SPEC_COLUMNS) + [k for k in cols if k not in SPEC_COLUMNS]
    n = len(cols["tau"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([repr(float(cols[k][i])) for k in names])


def read_history_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path} is empty")
    head, body = rows[0], rows[1:]
    missing = [c for c in SPEC_COLUMNS if c not in head]
    if missing:
        raise InputError(f"{path} lacks columns {missing}")
    data = np.array(body, dtype=float).reshape(len(body), len(head))
    return {name: data[:, j] for j, name in enumerate(head)}


# --------------------------------------------------------------------------
# validators (all operate on history columns)


@dataclass
class Check:
    value: float | None
    tolerance: float | None
    passed: bool
    note: str = ""

    def to_dict(self):
        return {"value": self.value, "tolerance": self.tolerance, "passed": self.passed, "note": self.note}


@dataclass
class ParabolicSeries:
    taus: np.ndarray
    errors: np.ndarray
    check_tau: float
    value: float
    decreasing: bool


def validate_parabolic(cols: dict, check_tau: float | None = None) -> ParabolicSeries:
    """Sup-error series of tau u against (|y|^2 - 4)/sqrt8; value read at the sample nearest ``check_tau``."""
    if "parabolic_err" not in cols:
        raise InputError("history has no parabolic_err column")
    t, e = np.asarray(cols["tau"]), np.asarray(cols["parabolic_err"])
    k = len(t) - 1 if check_tau is None else int(np.argmin(np.abs(t - check_tau)))
    return ParabolicSeries(t, e, float(t[k]), float(e[k]), bool(e[-1] <= e[0]))


@dataclass
class IntermediateSeries:
    taus: np.ndarray
    deviations: np.ndarray
    checkpoint_taus: np.ndarray
    checkpoint_values: np.ndarray
    partial_coverage: bool
    monotone: bool              # deviation grows as |tau| shrinks across checkpoints

    @property
    def final(self) -> float:
        return float(self.checkpoint_values[-1])


def validate_intermediate(cols: dict, checkpoints=None) -> IntermediateSeries:
    if "intermediate_dev" not in cols:
        raise InputError("history has no intermediate_dev column")
    t, d = np.asarray(cols["tau"]), np.asarray(cols["intermediate_dev"])
    full = np.asarray(cols.get("intermediate_full", np.ones_like(t))) > 0.5
    cps = np.sort(np.asarray(checkpoints if checkpoints else t, dtype=float))
    idx = np.array([int(np.argmin(np.abs(t - c))) for c in cps])
    vals = d[idx]
    return IntermediateSeries(t, d, t[idx], vals, bool(not full[idx].all()),
                              bool(np.all(np.diff(vals) > 0)))


@dataclass
class TipVerdict:
    diameter_ratio: np.ndarray
    curvature_ratio: np.ndarray
    diameter_residual: float        # max |d / sqrt(2|t| log|t|) - 1|
    curvature_residual: float       # max |H / sqrt(log|t| / |t|) - 1/sqrt2|
    bowl_residual: float | None = None

    def passed(self, tol: float, bowl_tol: float = 1e-8) -> bool:
        ok = self.diameter_residual <= tol and self.curvature_residual <= tol
        return ok and (self.bowl_residual is None or self.bowl_residual <= bowl_tol)


def validate_tip(t, d, H, bowl: bool = False) -> TipVerdict:
    """Compare tip diameter and curvature samples (t < -1) with the bowl-scale asymptotics."""
    t, d, H = (np.asarray(x, dtype=float) for x in (t, d, H))
    if t.size < 5 or d.size != t.size or H.size != t.size:
        raise InputError("need at least 5 matched (t, d, H) samples")
    if np.any(t >= -1):
        raise InputError("tip asymptotics need t < -1")
    L = np.log(-t)
    dr = d / np.sqrt(-2 * t * L)
    hr = H / np.sqrt(L / -t)
    res = solve_bowl(1 / SQRT2).ode_residual() if bowl else None
    return TipVerdict(dr, hr, float(np.max(np.abs(dr - 1))), float(np.max(np.abs(hr - 1 / SQRT2))), res)


def growth_exponent(cols: dict, start_fraction: float = 0.0) -> float:
    """Least-squares slope of log ||u_hat|| against tau."""
    t = np.asarray(cols["tau"])
    n2 = np.asarray(cols["Uplus"]) + np.asarray(cols["U0"]) + np.asarray(cols["Uminus"])
    k = int(start_fraction * t.size)
    return float(np.polyfit(t[k:], 0.5 * np.log(n2[k:]), 1)[0])


@dataclass
class ValidationReport:
    scenario: str
    checks: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    Q: list | None = None
    snap_distances: list | None = None
    f_monotone: bool | None = None
    theta_defects: list = field(default_factory=list)
    partial: bool = False
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "passed": self.passed,
                "checks": {k: c.to_dict() for k, c in self.checks.items()},
                "verdicts": self.verdicts, "Q": self.Q, "snap_distances": self.snap_distances,
                "f_monotone": self.f_monotone, "theta_defect_max": max(self.theta_defects, default=None),
                "partial": self.partial, "notes": self.notes}


def _rotation_error_deg(phi: float, phi0: float) -> float:
    # eigenvector directions are defined modulo pi
    d = (phi - phi0 + math.pi / 2) % math.pi - math.pi / 2
    return abs(math.degrees(d))


def validate_history(cols: dict, cfg: ScenarioConfig, partial: bool = False) -> ValidationReport:
    """Run every validator enabled for ``cfg.scenario`` against history columns."""
    tol = cfg.tolerances
    rep = ValidationReport(cfg.scenario, partial=partial)
    t = np.asarray(cols["tau"])
    al = np.stack([np.asarray(cols[f"alpha{j}"]) for j in range(1, 8)], axis=1)
    rep.theta_defects = [float(x) for x in cols["theta_defect"]]
    if partial:
        rep.checks["complete"] = Check(float(t[-1]), cfg.tau1, False, "run stopped early")
        rep.notes.append("partial history: validators use the samples that exist")

    dF = np.diff(np.asarray(cols["F"]))
    inc = float(dF.max()) if dF.size else 0.0
    rep.f_monotone = inc <= tol.f_slack
    rep.checks["F_monotone"] = Check(inc, tol.f_slack, rep.f_monotone, "max increase of F between samples")

    if cfg.noise == 0 and not ({"cos", "sin"} & set(cfg.perturbation)):
        dmax = float(np.max(cols["theta_defect"]))
        rep.checks["theta_defect"] = Check(dmax, tol.theta_defect, dmax <= tol.theta_defect)

    name = cfg.scenario
    if name == "cylinder":
        dev = float(max(np.abs(al).max(), np.max(cols["Uplus"]), np.max(cols["U0"]), np.max(cols["Uminus"])))
        rep.checks["stationary"] = Check(dev, 1e-10, dev <= 1e-10, "max |alpha| and mode energies")

    if name == "rank2_seed":
        ref = 1.0 / (SQRT8 * t)
        rel = float(np.max(np.abs(al[:, :2] / ref[:, None] - 1)))
        a3 = float(np.max(np.abs(al[:, 2])))
        rep.checks["alpha_tracking"] = Check(rel, tol.alpha_rel, rel <= tol.alpha_rel,
                                             "max |alpha_{1,2} sqrt8 tau - 1|")
        rep.checks["alpha3"] = Check(a3, tol.alpha3_abs, a3 <= tol.alpha3_abs)
        if "parabolic_err" in cols:
            ps = validate_parabolic(cols, cfg.parabolic_check_tau)
            rep.checks["parabolic"] = Check(ps.value, tol.parabolic, ps.value <= tol.parabolic,
                                            f"sup over |y| <= {tol.parabolic_radius} at tau={ps.check_tau}")

    if name in ("rank1_seed", "rank1_rotated_seed") and "parabolic_err" in cols:
        ps = validate_parabolic(cols, cfg.parabolic_check_tau)
        rep.verdicts["parabolic_err_rank2_ansatz"] = ps.value

    if name in EXPECTED_RANK and len(t) >= 4:
        if name == "cylinder":
            rep.verdicts["Q_rank"] = 0
        else:
            qm = classify_Q(ModeTrajectory(t, al[:, :3]))
            rep.verdicts["Q_verdict"] = qm.verdict
            rep.verdicts["Q_rank"] = qm.rank
            rep.verdicts["Q_raw_eigs"] = qm.raw_eigs.tolist()
            rep.snap_distances = qm.snap_distances.tolist()
            rep.Q = qm.Q.tolist() if qm.Q is not None else None
            want = EXPECTED_RANK[name]
            rep.checks["Q_rank"] = Check(qm.rank, want, qm.rank == want, qm.verdict)
            if name == "rank1_rotated_seed" and qm.phi is not None:
                err = _rotation_error_deg(qm.phi, cfg.rotation)
                rep.verdicts["phi"] = qm.phi
                rep.checks["rotation_angle"] = Check(err, tol.angle_deg, err <= tol.angle_deg, "degrees")

    if name != "cylinder" and len(t) >= 10:
        mz = merle_zaag_classify({"taus": t, "Uplus": cols["Uplus"], "U0": cols["U0"], "Uminus": cols["Uminus"]})
        rep.verdicts["merle_zaag"] = mz.label
        rep.verdicts["neutral_ratio"] = mz.neutral_ratio
        rep.verdicts["unstable_ratio"] = mz.unstable_ratio
        want = "unstable-dominant" if name == "unstable_seed" else "neutral-dominant"
        if name != "custom":
            rep.checks["merle_zaag"] = Check(None, None, mz.label == want, f"{mz.label} (want {want})")

    if name == "unstable_seed" and len(t) >= 3:
        k = growth_exponent(cols)
        rep.checks["growth_rate"] = Check(k, tol.growth_tol, abs(k - tol.growth_rate) <= tol.growth_tol,
                                          f"fitted exponent vs {tol.growth_rate}")

    if "intermediate_dev" in cols and cfg.intermediate_checkpoints:
        iseries = validate_intermediate(cols, cfg.intermediate_checkpoints)
        rep.checks["intermediate"] = Check(iseries.final, tol.intermediate, iseries.final <= tol.intermediate,
                                           f"sup on |z|^2 <= {tol.intermediate_z2} at tau={iseries.checkpoint_taus[-1]}")
        rep.checks["intermediate_trend"] = Check(None, None, iseries.monotone,
                                                 "deviation decreases with |tau| across checkpoints")
        rep.verdicts["intermediate_checkpoints"] = dict(zip(map(float, iseries.checkpoint_taus),
                                                            map(float, iseries.checkpoint_values)))
        if iseries.partial_coverage:
            rep.notes.append("intermediate z-set not fully inside the grid at some checkpoints")

    if "barrier_clearance" in cols:
        c = float(np.min(cols["barrier_clearance"]))
        rep.checks["barrier_clearance"] = Check(c, 0.0, c > 0, f"a={cfg.barrier_a}, eta={cfg.barrier_eta}")
    if cfg.validators is not None:
        keep = set(cfg.validators) | {"complete"}
        unknown = keep - set(rep.checks) - {"complete"}
        if unknown:
            rep.notes.append(f"requested validators not applicable here: {sorted(unknown)}")
        for name in list(rep.checks):
            if name not in keep:
                rep.verdicts.setdefault("disabled_checks", {})[name] = rep.checks.pop(name).to_dict()
    return rep


# --------------------------------------------------------------------------
# orchestration


@dataclass
class ExperimentResult:
    report: ValidationReport
    history: FlowHistory
    columns: dict
    csv_path: str | None
    report_path: str | None


def run_experiment(cfg: ScenarioConfig, output_dir=None, progress=None, snapshot_taus=()) -> ExperimentResult:
    """Run the flow, write history.csv and report.json, and validate from the CSV."""
    out = output_dir or cfg.output_dir
    grid = cfg.grid.build()
    hist = run(cfg, probes=make_probes(cfg, grid), snapshot_taus=snapshot_taus, progress=progress)
    cols = hist.columns()
    csv_path = rep_path = None
    if out:
        os.makedirs(out, exist_ok=True)
        csv_path = os.path.join(out, "history.csv")
        write_history_csv(cols, csv_path)
        cols = read_history_csv(csv_path)
    report = validate_history(cols, cfg, partial=hist.partial)
    if hist.failure:
        report.notes.append(hist.failure)
    if out:
        rep_path = os.path.join(out, "report.json")
        with open(rep_path, "w") as fh:
            json.dump({"config": cfg.to_dict(), **report.to_dict()}, fh, indent=2, sort_keys=True)
    return ExperimentResult(report, hist, cols, csv_path, rep_path)


def validate_file(csv_path, cfg: ScenarioConfig | None = None) -> ValidationReport:
    """Recompute a report from history.csv; the config comes from a sibling report.json if not given."""
    if cfg is None:
        side = os.path.join(os.path.dirname(os.path.abspath(csv_path)), "report.json")
        if not os.path.exists(side):
            raise InputError("no config given and no report.json next to the history")
        with open(side) as fh:
            cfg = ScenarioConfig.from_dict(json.load(fh)["config"])
    cols = read_history_csv(csv_path)
    partial = bool(cols["tau"][-1] < cfg.tau1 - 1e-9)
    return validate_history(cols, cfg, partial=partial)


# --------------------------------------------------------------------------
# phase portrait


def emit_phase_portrait(path, box=APRIORI_BOX, density: int = 21, n_trajectories: int = 4,
                        n_path: int = 200) -> int:
    """Write (series, x, y, xdot, ydot) rows: a density x density lattice, then trajectories.

    Trajectories are the (1,1) -> (1/2,0) connector and ``n_trajectories``
    backward-in-sigma orbits (the tau -> -infinity direction). Returns the row count.
    """
    (x0, x1), (y0, y1) = box
    rows = []
    for x in np.linspace(x0, x1, density):
        for y in np.linspace(y0, y1, density):
            vx, vy = phase_vector_field(x, y)
            rows.append(("grid", x, y, vx, vy))
    paths = [("connector", connector(n_path=n_path)[0])]
    if n_trajectories:
        side = max(1, int(math.ceil(math.sqrt(n_trajectories))))
        for k, (start, _, _) in enumerate(box_invariance_check(n=side)[:n_trajectories]):
            paths.append((f"backward{k}", _backward_path(start, n_path)))
    for label, p in paths:
        for x, y in p:
            vx, vy = phase_vector_field(x, y)
            rows.append((label, x, y, vx, vy))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "x", "y", "xdot", "ydot"])
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
    return len(rows)


def _backward_path(start, n_path: int, sigma_span: float = 30.0):
    def rhs(s, p):
        vx, vy = phase_vector_field(p[0], p[1])
        return [-vx, -vy]
    ss = np.linspace(0.0, sigma_span, n_path)
    sol = solve_ivp(rhs, (0.0, sigma_span), list(start), method="DOP853", t_eval=ss, rtol=1e-10, atol=1e-13)
    return sol.y.T


def write_profile_csv(path, r, values, header=("r", "u")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in zip(r, *values) if isinstance(values, tuple) else zip(r, values):
            w.writerow([repr(float(v)) for v in row])


__all__ = ["Check", "ExperimentResult", "IntermediateSeries", "ParabolicSeries", "TipVerdict",
           "ValidationReport", "emit_phase_portrait", "growth_exponent", "intermediate_deviation",
           "make_probes", "parabolic_error", "read_history_csv", "run_experiment", "validate_file",
           "validate_history", "validate_intermediate", "validate_parabolic", "validate_tip",
           "write_history_csv", "write_profile_csv"]
