"""Ground-truth simulator for the double thermoelastic pendulum.

Two masses, two thermoelastic springs: spring 1 ties mass 1 to the origin,
spring 2 ties mass 2 to mass 1. Each spring stores internal energy

    e_i(lam, s) = (k_i/2)(lam - lam0_i)^2 + C_i * theta_ref * (lam0_i/lam)^beta * exp(s/C_i)

so its temperature theta_i = de_i/ds is strictly positive and rises under
compression (adiabatic-gas-like coupling). The thermal term diverges as
lam -> 0, which keeps spring lengths bounded away from zero for the
energetic initial conditions used here. Heat flows between the springs as

    s1' = kappa*(theta2/theta1 - 1),   s2' = kappa*(theta1/theta2 - 1)

which exchanges thermal energy exactly (theta1*s1' + theta2*s2' = 0) and
produces entropy kappa*(r + 1/r - 2) >= 0 for r = theta1/theta2. Total
energy is conserved identically along the continuous flow; the RK4
integrator keeps the relative drift below 1e-6 per trajectory, validated
by a probe run at construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidInputError, NumericError
from .state import (P1, P2, Q1, Q2, S1, S2, SYSTEM_DIM, Dataset, PendulumParams,
                    SystemState, Trajectory)

DEFAULT_DT = 0.3
DEFAULT_N_STEPS = 200
DEFAULT_SUBSTEPS = 60

# length below which a drawn initial condition counts as degenerate
MIN_SPRING_LENGTH = 1e-3


# ---------------------------------------------------------------------------
# constitutive model

def _coupling(lam, lam0: float, beta: float):
    return (lam0 / lam) ** beta


def spring_temperature(params: PendulumParams, lam, s, i: int):
    """theta_i = de_i/ds, strictly positive for lam > 0."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0.0):
        raise DomainError("spring length must be positive")
    lam0, C = (params.lam01, params.C1) if i == 1 else (params.lam02, params.C2)
    return params.theta_ref * _coupling(lam, lam0, params.beta) * np.exp(np.asarray(s) / C)


def internal_energy(params: PendulumParams, lam, s, i: int):
    """Stored energy of spring i at length lam and entropy s."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0.0):
        raise DomainError("spring length must be positive")
    lam0, C, k = (params.lam01, params.C1, params.k1) if i == 1 else (params.lam02, params.C2, params.k2)
    elastic = 0.5 * k * (lam - lam0) ** 2
    thermal = C * params.theta_ref * _coupling(lam, lam0, params.beta) * np.exp(np.asarray(s) / C)
    return elastic + thermal


def spring_tension(params: PendulumParams, lam, s, i: int):
    """de_i/dlam; negative values push the endpoints apart."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0.0):
        raise DomainError("spring length must be positive")
    lam0, k = (params.lam01, params.k1) if i == 1 else (params.lam02, params.k2)
    C = params.C1 if i == 1 else params.C2
    theta = spring_temperature(params, lam, s, i)
    return k * (lam - lam0) - params.beta * C * theta / lam


# ---------------------------------------------------------------------------
# vector field and potentials (batch-first; single states go through (1, 10))

def _geometry(Z: np.ndarray):
    q1 = Z[:, Q1]
    d = Z[:, Q2] - q1
    lam1 = np.linalg.norm(q1, axis=1)
    lam2 = np.linalg.norm(d, axis=1)
    if np.any(lam1 <= 0.0) or np.any(lam2 <= 0.0):
        raise DomainError("degenerate spring length in state")
    return lam1, lam2, q1 / lam1[:, None], d / lam2[:, None]


def rhs_batch(params: PendulumParams, Z: np.ndarray) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    lam1, lam2, n1, n2 = _geometry(Z)
    th1 = spring_temperature(params, lam1, Z[:, S1], 1)
    th2 = spring_temperature(params, lam2, Z[:, S2], 2)
    f1 = spring_tension(params, lam1, Z[:, S1], 1)
    f2 = spring_tension(params, lam2, Z[:, S2], 2)
    out = np.empty_like(Z)
    out[:, Q1] = Z[:, P1] / params.m1
    out[:, Q2] = Z[:, P2] / params.m2
    out[:, P1] = -f1[:, None] * n1 + f2[:, None] * n2
    out[:, P2] = -f2[:, None] * n2
    out[:, S1] = params.kappa * (th2 / th1 - 1.0)
    out[:, S2] = params.kappa * (th1 / th2 - 1.0)
    return out


def oracle_rhs(params: PendulumParams, z: SystemState) -> np.ndarray:
    """Time derivative of the 10-dim system state."""
    return rhs_batch(params, z.as_array()[None, :])[0]


def energy_batch(params: PendulumParams, Z: np.ndarray) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    lam1, lam2, _, _ = _geometry(Z)
    kinetic = (Z[:, P1] ** 2).sum(1) / (2.0 * params.m1) + (Z[:, P2] ** 2).sum(1) / (2.0 * params.m2)
    return kinetic + internal_energy(params, lam1, Z[:, S1], 1) + internal_energy(params, lam2, Z[:, S2], 2)


def total_energy(params: PendulumParams, z: SystemState) -> float:
    return float(energy_batch(params, z.as_array()[None, :])[0])


def total_entropy(params: PendulumParams, z: SystemState) -> float:
    return float(z.z1.s + z.z2.s)


def subsystem_energies(params: PendulumParams, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(E1, E2): each mass's kinetic energy plus its own spring's internal energy."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    lam1, lam2, _, _ = _geometry(Z)
    E1 = (Z[:, P1] ** 2).sum(1) / (2.0 * params.m1) + internal_energy(params, lam1, Z[:, S1], 1)
    E2 = (Z[:, P2] ** 2).sum(1) / (2.0 * params.m2) + internal_energy(params, lam2, Z[:, S2], 2)
    return E1, E2


def rk4_step(params: PendulumParams, Z: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs_batch(params, Z)
    k2 = rhs_batch(params, Z + 0.5 * h * k1)
    k3 = rhs_batch(params, Z + 0.5 * h * k2)
    k4 = rhs_batch(params, Z + h * k3)
    return Z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_batch(params: PendulumParams, Z0: np.ndarray, n_steps: int, dt: float,
                   substeps: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    """RK4-integrate a batch of initial states; returns (n_batch, n_steps+1, 10)."""
    if n_steps < 1:
        raise InvalidInputError("n_steps must be >= 1")
    if substeps < 1:
        raise InvalidInputError("substeps must be >= 1")
    Z = np.atleast_2d(np.asarray(Z0, dtype=float)).copy()
    out = np.empty((Z.shape[0], n_steps + 1, SYSTEM_DIM))
    out[:, 0] = Z
    h = dt / substeps
    for t in range(n_steps):
        for _ in range(substeps):
            Z = rk4_step(params, Z, h)
        if not np.isfinite(Z).all():
            bad = np.flatnonzero(~np.isfinite(Z).all(axis=1))
            raise NumericError(f"non-finite state at output step {t + 1} (batch rows {bad.tolist()})")
        out[:, t + 1] = Z
    return out


# ---------------------------------------------------------------------------
# initial conditions and dataset generation

@dataclass(frozen=True)
class ICSpec:
    """Uniform box around the nominal initial configuration.

    Each position/momentum component is drawn uniformly in
    mean +- spread*|mean|; entropies are then set so both springs start at
    `theta0` kelvin at their drawn stretch.
    """

    q1_mean: tuple[float, float] = (4.5, 4.5)
    p1_mean: tuple[float, float] = (2.0, 4.5)
    q2_mean: tuple[float, float] = (-0.5, 1.5)
    p2_mean: tuple[float, float] = (1.4, -0.2)
    spread: float = 0.1
    theta0: float = 300.0

    def to_dict(self) -> dict:
        return {
            "q1_mean": list(self.q1_mean), "p1_mean": list(self.p1_mean),
            "q2_mean": list(self.q2_mean), "p2_mean": list(self.p2_mean),
            "spread": self.spread, "theta0": self.theta0,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ICSpec":
        return cls(q1_mean=tuple(d["q1_mean"]), p1_mean=tuple(d["p1_mean"]),
                   q2_mean=tuple(d["q2_mean"]), p2_mean=tuple(d["p2_mean"]),
                   spread=d["spread"], theta0=d["theta0"])


def entropy_for_temperature(params: PendulumParams, lam, theta, i: int):
    """Entropy putting spring i at temperature theta for length lam."""
    lam0, C = (params.lam01, params.C1) if i == 1 else (params.lam02, params.C2)
    return C * (np.log(np.asarray(theta) / params.theta_ref) + params.beta * np.log(np.asarray(lam) / lam0))


def draw_initial_states(params: PendulumParams, n: int, rng: np.random.Generator,
                        ic: ICSpec, max_retries: int = 100) -> np.ndarray:
    means = np.array(ic.q1_mean + ic.p1_mean + ic.q2_mean + ic.p2_mean)
    lo = means - np.abs(means) * ic.spread
    hi = means + np.abs(means) * ic.spread
    out = np.empty((n, SYSTEM_DIM))
    for row in range(n):
        for attempt in range(max_retries + 1):
            x = rng.uniform(lo, hi)
            z = np.zeros(SYSTEM_DIM)
            z[Q1], z[P1] = x[0:2], x[2:4]
            z[Q2], z[P2] = x[4:6], x[6:8]
            lam1 = np.linalg.norm(z[Q1])
            lam2 = np.linalg.norm(z[Q2] - z[Q1])
            if lam1 > MIN_SPRING_LENGTH and lam2 > MIN_SPRING_LENGTH:
                z[S1] = entropy_for_temperature(params, lam1, ic.theta0, 1)
                z[S2] = entropy_for_temperature(params, lam2, ic.theta0, 2)
                out[row] = z
                break
        else:
            raise InvalidInputError(f"could not draw a non-degenerate initial condition in {max_retries} tries")
    return out


def equilibrium_state(params: PendulumParams, theta: float = 300.0) -> SystemState:
    """Rest state: zero momenta, both springs at force balance, equal temperatures.

    Force balance k*lam*(lam - lam0) = beta*C*theta has the positive root
    lam = (lam0 + sqrt(lam0^2 + 4*beta*C*theta/k))/2; with theta1 = theta2 the
    heat exchange also vanishes, so the full vector field is zero there.
    """
    lams = []
    for lam0, C, k in ((params.lam01, params.C1, params.k1), (params.lam02, params.C2, params.k2)):
        lams.append(0.5 * (lam0 + np.sqrt(lam0 ** 2 + 4.0 * params.beta * C * theta / k)))
    z = np.zeros(SYSTEM_DIM)
    z[Q1] = (lams[0], 0.0)
    z[Q2] = (lams[0] + lams[1], 0.0)
    z[S1] = entropy_for_temperature(params, lams[0], theta, 1)
    z[S2] = entropy_for_temperature(params, lams[1], theta, 2)
    return SystemState.from_array(z)


@dataclass(frozen=True)
class OracleModel:
    """Simulator handle: physical parameters plus RK4 sub-stepping per output step.

    Construction runs a 20-step probe from the nominal initial state and
    rejects substeps settings whose relative energy drift exceeds 1e-7 there
    (a 200-step trajectory then stays well under the 1e-6 budget).
    """

    params: PendulumParams = field(default_factory=PendulumParams)
    substeps: int = DEFAULT_SUBSTEPS
    probe_dt: float = DEFAULT_DT
    validate: bool = True

    def __post_init__(self):
        if self.substeps < 1:
            raise InvalidInputError("substeps must be >= 1")
        if self.validate:
            ic = ICSpec()
            z0 = np.zeros(SYSTEM_DIM)
            z0[Q1], z0[P1] = ic.q1_mean, ic.p1_mean
            z0[Q2], z0[P2] = ic.q2_mean, ic.p2_mean
            z0[S1] = entropy_for_temperature(self.params, np.linalg.norm(z0[Q1]), ic.theta0, 1)
            z0[S2] = entropy_for_temperature(self.params, np.linalg.norm(z0[Q2] - z0[Q1]), ic.theta0, 2)
            traj = simulate_batch(self.params, z0[None, :], 20, self.probe_dt, self.substeps)
            E = energy_batch(self.params, traj[0])
            drift = np.max(np.abs(E - E[0]) / np.abs(E[0]))
            if drift > 1e-7:
                raise InvalidInputError(
                    f"substeps={self.substeps} too coarse: probe energy drift {drift:.2e} > 1e-7")

    def rhs(self, z: SystemState) -> np.ndarray:
        return oracle_rhs(self.params, z)

    def simulate(self, z0: SystemState, n_steps: int, dt: float) -> Trajectory:
        states = simulate_batch(self.params, z0.as_array()[None, :], n_steps, dt, self.substeps)
        return Trajectory(dt=dt, states=states[0])

    def generate_dataset(self, n_sims: int, seed: int, ic: ICSpec | None = None,
                         n_steps: int = DEFAULT_N_STEPS, dt: float = DEFAULT_DT) -> Dataset:
        """Simulate `n_sims` random initial conditions; tags everything "train"
        (use `split_dataset` to retag)."""
        if n_sims < 1:
            raise InvalidInputError("n_sims must be >= 1")
        ic = ic or ICSpec()
        rng = np.random.default_rng(seed)
        Z0 = draw_initial_states(self.params, n_sims, rng, ic)
        states = simulate_batch(self.params, Z0, n_steps, dt, self.substeps)
        trajectories = tuple(Trajectory(dt=dt, states=states[i]) for i in range(n_sims))
        metadata = {
            "params": self.params.to_dict(),
            "ic_spec": ic.to_dict(),
            "seed": seed,
            "n_steps": n_steps,
            "dt": dt,
            "substeps": self.substeps,
            "integrator": "rk4",
        }
        return Dataset(trajectories=trajectories, split=("train",) * n_sims, metadata=metadata)
