"""Rollouts, per-variable relative-L2 boxplot statistics, thermodynamic audits.

Learned models are integrated with forward Euler (consistent with the
forward-difference training labels). Errors are pooled over every rollout
snapshot of a split and summarized per variable group (q, p, s) as Tukey
boxplot statistics: quartiles by linear interpolation, whiskers at the most
extreme data point within 1.5 IQR of the box.

Position and momentum errors are relative to the ground-truth snapshot
norm. Entropy errors are normalized by the ground-truth trajectory's
entropy range instead: s starts near a constant, and a pointwise relative
error would divide by an arbitrary offset.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .oracle import energy_batch, rhs_batch, spring_temperature, spring_tension
from .state import (P1, P2, Q1, Q2, S1, S2, SYSTEM_DIM, Dataset, PendulumParams,
                    SystemState, Trajectory)
from .ports import SubsystemEval
from .nets import MetriplecticOutput

GROUPS = {"q": [0, 1, 5, 6], "p": [2, 3, 7, 8], "s": [4, 9]}
GROUP_ORDER = ("q", "p", "s")


# ---------------------------------------------------------------------------
# boxplot statistics

@dataclass(frozen=True)
class BoxStats:
    lw: float
    lq: float
    med: float
    uq: float
    uw: float

    def __post_init__(self):
        vals = (self.lw, self.lq, self.med, self.uq, self.uw)
        if any(not np.isfinite(v) for v in vals):
            raise InvalidInputError(f"non-finite boxplot stats {vals}")
        if not (self.lw <= self.lq <= self.med <= self.uq <= self.uw):
            raise InvalidInputError(f"boxplot stats out of order {vals}")

    def to_dict(self) -> dict:
        return {"lw": self.lw, "lq": self.lq, "med": self.med, "uq": self.uq, "uw": self.uw}


def boxplot_stats(samples: np.ndarray) -> BoxStats:
    """Tukey boxplot summary; whiskers clamp to actual data points."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise InvalidInputError("no samples to summarize")
    lq, med, uq = np.percentile(x, [25.0, 50.0, 75.0])
    iqr = uq - lq
    in_lo = x[x >= lq - 1.5 * iqr]
    in_hi = x[x <= uq + 1.5 * iqr]
    return BoxStats(lw=float(in_lo.min()), lq=float(lq), med=float(med),
                    uq=float(uq), uw=float(in_hi.max()))


# ---------------------------------------------------------------------------
# rollout

@dataclass(frozen=True)
class Rollout:
    """Forward-Euler rollout; `truncated` marks a non-finite abort."""

    dt: float
    states: np.ndarray
    truncated: bool = False

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(dt=self.dt, states=self.states)

    def __len__(self) -> int:
        return len(self.states)


def rollout(model, z0, n_steps: int, dt: float) -> Rollout:
    """z_{t+1} = z_t + dt * f(z_t) with the model's full system field."""
    if isinstance(z0, SystemState):
        z0 = z0.as_array()
    z = np.asarray(z0, dtype=float).copy()
    if z.shape != (SYSTEM_DIM,):
        raise InvalidInputError(f"initial state must be ({SYSTEM_DIM},), got {z.shape}")
    out = [z.copy()]
    for _ in range(n_steps):
        try:
            dz = model.eval_system(z)
        except (FloatingPointError, ValueError, ArithmeticError):
            return Rollout(dt=dt, states=np.array(out), truncated=True)
        z = z + dt * dz
        if not np.isfinite(z).all():
            return Rollout(dt=dt, states=np.array(out), truncated=True)
        out.append(z.copy())
    return Rollout(dt=dt, states=np.array(out), truncated=False)


class OracleFieldModel:
    """Exact vector field and potentials wrapped in the learned-model interface.

    Bulk operators are the canonical symplectic block on (q, p) with M = 0,
    so the bulk degeneracy residuals vanish identically; the heat exchange
    and the partner spring's force on mass 1 live in the port term.
    """

    def __init__(self, params: PendulumParams):
        self.params = params
        n = 5
        L = np.zeros((n, n))
        L[0, 2] = L[1, 3] = 1.0
        L[2, 0] = L[3, 1] = -1.0
        self._L_can = L

    def eval_system(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        out = rhs_batch(self.params, np.atleast_2d(Z))
        return out[0] if single else out

    def eval_subsystems(self, Z: np.ndarray) -> tuple[SubsystemEval, SubsystemEval]:
        p = self.params
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        B = Z.shape[0]
        full = rhs_batch(p, Z)
        q1 = Z[:, Q1]
        d = Z[:, Q2] - q1
        lam1 = np.linalg.norm(q1, axis=1)
        lam2 = np.linalg.norm(d, axis=1)
        n1, n2 = q1 / lam1[:, None], d / lam2[:, None]
        subs = []
        for i, (lam, nvec, qs, ps, ss, m) in enumerate(
                ((lam1, n1, Q1, P1, S1, p.m1), (lam2, n2, Q2, P2, S2, p.m2)), start=1):
            f = spring_tension(p, lam, Z[:, ss], i)
            theta = spring_temperature(p, lam, Z[:, ss], i)
            gradE = np.zeros((B, 5))
            gradE[:, 0:2] = f[:, None] * nvec
            gradE[:, 2:4] = Z[:, ps] / m
            gradE[:, 4] = theta
            gradS = np.zeros((B, 5))
            gradS[:, 4] = 1.0
            bulk_dot = np.zeros((B, 5))
            bulk_dot[:, 0:2] = Z[:, ps] / m
            bulk_dot[:, 2:4] = -f[:, None] * nvec
            L = np.broadcast_to(self._L_can, (B, 5, 5)).copy()
            M = np.zeros((B, 5, 5))
            z_dot = full[:, 0:5] if i == 1 else full[:, 5:10]
            bulk = MetriplecticOutput(L=L, M=M, gradE=gradE, gradS=gradS, z_dot=bulk_dot)
            subs.append(SubsystemEval(bulk=bulk, port_term=bulk_dot - z_dot, z_dot=z_dot))
        return subs[0], subs[1]


# ---------------------------------------------------------------------------
# error statistics

def _entropy_denominator(truth_states: np.ndarray) -> float:
    s = truth_states[:, GROUPS["s"]]
    ranges = s.max(axis=0) - s.min(axis=0)
    return max(float(np.linalg.norm(ranges)), 1e-300)


def group_errors(pred_states: np.ndarray, truth_states: np.ndarray) -> dict[str, np.ndarray]:
    """Per-snapshot relative L2 errors for t >= 1 (t = 0 is the given IC)."""
    pred_states = np.asarray(pred_states, dtype=float)
    truth_states = np.asarray(truth_states, dtype=float)
    n = min(len(pred_states), len(truth_states))
    if n < 2:
        raise InvalidInputError("need at least two snapshots to score a rollout")
    errors = {}
    s_den = _entropy_denominator(truth_states)
    for g, cols in GROUPS.items():
        diff = np.linalg.norm(pred_states[1:n, cols] - truth_states[1:n, cols], axis=1)
        if g == "s":
            errors[g] = diff / s_den
        else:
            errors[g] = diff / np.linalg.norm(truth_states[1:n, cols], axis=1)
    return errors


def relative_l2_stats(pred: Trajectory, truth: Trajectory) -> dict[str, BoxStats]:
    if len(pred) != len(truth) or pred.dt != truth.dt:
        raise InvalidInputError("pred and truth trajectories must share length and dt")
    errs = group_errors(pred.states, truth.states)
    return {g: boxplot_stats(errs[g]) for g in GROUP_ORDER}


# ---------------------------------------------------------------------------
# thermodynamic audits

@dataclass(frozen=True)
class ThermoAudit:
    """Model-implied rates along a trajectory (bulk identities + port totals)."""

    max_bulk_energy_rate: float     # max_t max_i |<gradE_i, z_dot_bulk,i>|
    mean_bulk_energy_rate: float
    min_entropy_rate: float         # min_t (dS1 + dS2), full fields
    entropy_rate_violations: int    # count of composite rates below -1e-6
    mean_deg_residual: float        # mean_t sum_i ||L_i gS_i||^2 + ||M_i gE_i||^2

    def to_dict(self) -> dict:
        return {"max_bulk_energy_rate": self.max_bulk_energy_rate,
                "mean_bulk_energy_rate": self.mean_bulk_energy_rate,
                "min_entropy_rate": self.min_entropy_rate,
                "entropy_rate_violations": self.entropy_rate_violations,
                "mean_deg_residual": self.mean_deg_residual}


def thermo_audit(model, traj: Trajectory) -> ThermoAudit:
    Z = np.asarray(traj.states, dtype=float)
    sub1, sub2 = model.eval_subsystems(Z)
    e_rates = []
    deg = np.zeros(len(Z))
    dS = np.zeros(len(Z))
    for sub in (sub1, sub2):
        bulk = sub.bulk
        e_rates.append(np.abs((bulk.gradE * bulk.z_dot).sum(-1)))
        r_L = np.matmul(bulk.L, bulk.gradS[..., None])[..., 0]
        r_M = np.matmul(bulk.M, bulk.gradE[..., None])[..., 0]
        deg += (r_L ** 2).sum(-1) + (r_M ** 2).sum(-1)
        dS += (bulk.gradS * sub.z_dot).sum(-1)
    e_rates = np.stack(e_rates)
    return ThermoAudit(
        max_bulk_energy_rate=float(e_rates.max()),
        mean_bulk_energy_rate=float(e_rates.mean()),
        min_entropy_rate=float(dS.min()),
        entropy_rate_violations=int((dS < -1e-6).sum()),
        mean_deg_residual=float(deg.mean()),
    )


@dataclass(frozen=True)
class PhysicsAudit:
    """True-physics consistency of predicted states (needs oracle parameters)."""

    max_rel_energy_drift: float
    min_entropy_increment: float

    def to_dict(self) -> dict:
        return {"max_rel_energy_drift": self.max_rel_energy_drift,
                "min_entropy_increment": self.min_entropy_increment}


def physics_audit(params: PendulumParams, states: np.ndarray) -> PhysicsAudit:
    E = energy_batch(params, states)
    drift = float(np.max(np.abs(E - E[0]) / max(abs(E[0]), 1e-300)))
    S = states[:, S1] + states[:, S2]
    return PhysicsAudit(max_rel_energy_drift=drift,
                        min_entropy_increment=float(np.diff(S).min()) if len(S) > 1 else 0.0)


# ---------------------------------------------------------------------------
# full evaluation over a dataset split

@dataclass
class SplitReport:
    stats: dict[str, BoxStats]
    audit: ThermoAudit
    physics: PhysicsAudit | None
    n_rollouts: int
    n_truncated: int

    def to_dict(self) -> dict:
        return {
            "stats": {g: self.stats[g].to_dict() for g in GROUP_ORDER},
            "audit": self.audit.to_dict(),
            "physics": self.physics.to_dict() if self.physics else None,
            "n_rollouts": self.n_rollouts,
            "n_truncated": self.n_truncated,
        }


@dataclass
class EvalReport:
    splits: dict[str, SplitReport] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {name: rep.to_dict() for name, rep in self.splits.items()}

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def write_stats_table(stats: dict[str, BoxStats], path):
    """Whitespace-delimited table, one row per variable group (q, p, s)."""
    with open(path, "w") as fh:
        fh.write("group lw lq med uq uw\n")
        for g in GROUP_ORDER:
            s = stats[g]
            fh.write(f"{g} {s.lw:.10e} {s.lq:.10e} {s.med:.10e} {s.uq:.10e} {s.uw:.10e}\n")


def _pooled_stats(errors: list[dict[str, np.ndarray]]) -> dict[str, BoxStats]:
    return {g: boxplot_stats(np.concatenate([e[g] for e in errors])) for g in GROUP_ORDER}


def evaluate_split(model, ds: Dataset, tag: str, rollout_steps: int | None = None,
                   workers: int = 1) -> SplitReport:
    """Roll out every trajectory of a split from its initial state and score it."""
    idx = ds.indices(tag)
    if not idx:
        raise InvalidInputError(f"dataset has no {tag!r} trajectories")
    truths = [ds.trajectories[i] for i in idx]
    n_steps = rollout_steps if rollout_steps is not None else len(truths[0]) - 1
    n_steps = min(n_steps, len(truths[0]) - 1)

    def run(truth: Trajectory) -> Rollout:
        return rollout(model, truth.states[0], n_steps, truth.dt)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rollouts = list(pool.map(run, truths))
    else:
        rollouts = [run(t) for t in truths]

    errors = []
    audits = []
    phys: PhysicsAudit | None = None
    params = None
    if isinstance(ds.metadata, dict) and "params" in ds.metadata:
        params = PendulumParams.from_dict(ds.metadata["params"])
    drift_max, ds_min = 0.0, np.inf
    for ro, truth in zip(rollouts, truths):
        if len(ro) >= 2:
            errors.append(group_errors(ro.states, truth.states))
            audits.append(thermo_audit(model, ro.trajectory))
            if params is not None:
                pa = physics_audit(params, ro.states)
                drift_max = max(drift_max, pa.max_rel_energy_drift)
                ds_min = min(ds_min, pa.min_entropy_increment)
    if not errors:
        raise InvalidInputError(f"every rollout in split {tag!r} truncated immediately")
    if params is not None:
        phys = PhysicsAudit(max_rel_energy_drift=drift_max, min_entropy_increment=float(ds_min))
    audit = ThermoAudit(
        max_bulk_energy_rate=max(a.max_bulk_energy_rate for a in audits),
        mean_bulk_energy_rate=float(np.mean([a.mean_bulk_energy_rate for a in audits])),
        min_entropy_rate=min(a.min_entropy_rate for a in audits),
        entropy_rate_violations=sum(a.entropy_rate_violations for a in audits),
        mean_deg_residual=float(np.mean([a.mean_deg_residual for a in audits])),
    )
    return SplitReport(stats=_pooled_stats(errors), audit=audit, physics=phys,
                       n_rollouts=len(rollouts), n_truncated=sum(r.truncated for r in rollouts))


def evaluate_model(model, ds: Dataset, splits=("train", "test"), rollout_steps: int | None = None,
                   workers: int = 1) -> EvalReport:
    report = EvalReport()
    for tag in splits:
        report.splits[tag] = evaluate_split(model, ds, tag, rollout_steps, workers)
    return report


def persistence_stats(ds: Dataset, tag: str) -> dict[str, BoxStats]:
    """Zero-model baseline: the prediction never leaves the initial state."""
    errors = []
    for truth in ds.subset(tag):
        const = np.repeat(truth.states[:1], len(truth), axis=0)
        errors.append(group_errors(const, truth.states))
    if not errors:
        raise InvalidInputError(f"dataset has no {tag!r} trajectories")
    return _pooled_stats(errors)
