"""Domain types for the double thermoelastic pendulum experiments.

Each pendulum mass carries a 5-dimensional state z = (q, p, s): planar
position, linear momentum, and entropy. The coupled system stacks the two
subsystem states into a 10-vector with the column layout

    q1x, q1y, p1x, p1y, s1, q2x, q2y, p2x, p2y, s2

which is also the CSV column order used on disk. All types are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import InvalidInputError

STATE_DIM = 5
SYSTEM_DIM = 10

# column indices into the 10-vector
Q1, P1, S1 = slice(0, 2), slice(2, 4), 4
Q2, P2, S2 = slice(5, 7), slice(7, 9), 9

COLUMNS = ("q1x", "q1y", "p1x", "p1y", "s1", "q2x", "q2y", "p2x", "p2y", "s2")


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class StateVector:
    """Per-subsystem state (q, p, s) in R^5."""

    q: np.ndarray
    p: np.ndarray
    s: float

    def __post_init__(self):
        object.__setattr__(self, "q", _frozen(self.q))
        object.__setattr__(self, "p", _frozen(self.p))
        object.__setattr__(self, "s", float(self.s))
        if self.q.shape != (2,) or self.p.shape != (2,):
            raise InvalidInputError(f"q and p must be 2-vectors, got {self.q.shape}, {self.p.shape}")
        if not (np.isfinite(self.q).all() and np.isfinite(self.p).all() and np.isfinite(self.s)):
            raise InvalidInputError("state components must be finite")

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q, self.p, [self.s]])

    @classmethod
    def from_array(cls, z) -> "StateVector":
        z = np.asarray(z, dtype=float)
        if z.shape != (STATE_DIM,):
            raise InvalidInputError(f"expected shape ({STATE_DIM},), got {z.shape}")
        return cls(q=z[0:2], p=z[2:4], s=z[4])


@dataclass(frozen=True)
class SystemState:
    """Coupled pair of subsystem states; spring lengths must stay positive."""

    z1: StateVector
    z2: StateVector

    def __post_init__(self):
        if self.spring_lengths()[0] <= 0.0 or self.spring_lengths()[1] <= 0.0:
            raise InvalidInputError("degenerate spring length (|q1| or |q2 - q1| is zero)")

    def spring_lengths(self) -> tuple[float, float]:
        lam1 = float(np.linalg.norm(self.z1.q))
        lam2 = float(np.linalg.norm(self.z2.q - self.z1.q))
        return lam1, lam2

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.z1.as_array(), self.z2.as_array()])

    @classmethod
    def from_array(cls, z) -> "SystemState":
        z = np.asarray(z, dtype=float)
        if z.shape != (SYSTEM_DIM,):
            raise InvalidInputError(f"expected shape ({SYSTEM_DIM},), got {z.shape}")
        return cls(z1=StateVector.from_array(z[:STATE_DIM]), z2=StateVector.from_array(z[STATE_DIM:]))


@dataclass(frozen=True)
class PendulumParams:
    """Physical constants of the double thermoelastic pendulum.

    Masses, natural lengths, thermal constants and conductivity follow the
    reference experiment; spring stiffnesses, the thermoelastic coupling
    exponent and the reference temperature close the constitutive model.
    """

    m1: float = 1.0
    m2: float = 2.0
    lam01: float = 2.0
    lam02: float = 1.0
    C1: float = 0.02
    C2: float = 0.2
    kappa: float = 0.5
    k1: float = 1.0
    k2: float = 1.0
    beta: float = 1.0
    theta_ref: float = 1.0

    def __post_init__(self):
        positive = {
            "m1": self.m1, "m2": self.m2, "lam01": self.lam01, "lam02": self.lam02,
            "C1": self.C1, "C2": self.C2, "k1": self.k1, "k2": self.k2,
            "theta_ref": self.theta_ref,
        }
        for name, value in positive.items():
            if not value > 0.0:
                raise InvalidInputError(f"{name} must be strictly positive, got {value}")
        if self.kappa < 0.0:
            raise InvalidInputError(f"kappa must be >= 0, got {self.kappa}")
        if self.beta < 0.0:
            raise InvalidInputError(f"beta must be >= 0, got {self.beta}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "m1", "m2", "lam01", "lam02", "C1", "C2", "kappa", "k1", "k2", "beta", "theta_ref")}

    @classmethod
    def from_dict(cls, d: dict) -> "PendulumParams":
        return cls(**d)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled state sequence; `states` has shape (n_steps + 1, 10)."""

    dt: float
    states: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen(self.states))
        if self.dt <= 0.0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if self.states.ndim != 2 or self.states.shape[1] != SYSTEM_DIM:
            raise InvalidInputError(f"states must be (n, {SYSTEM_DIM}), got {self.states.shape}")
        if len(self.states) < 2:
            raise InvalidInputError("trajectory needs at least 2 states")

    def __len__(self) -> int:
        return len(self.states)

    def state(self, t: int) -> SystemState:
        return SystemState.from_array(self.states[t])

    def times(self) -> np.ndarray:
        return np.arange(len(self.states)) * self.dt


@dataclass(frozen=True)
class Dataset:
    """Trajectory collection with a train/test split and generation metadata."""

    trajectories: tuple[Trajectory, ...]
    split: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(self, "split", tuple(self.split))
        if not self.trajectories:
            raise InvalidInputError("dataset must contain at least one trajectory")
        if len(self.split) != len(self.trajectories):
            raise InvalidInputError("split must tag every trajectory")
        for tag in self.split:
            if tag not in ("train", "test"):
                raise InvalidInputError(f"unknown split tag {tag!r}")
        dt0, n0 = self.trajectories[0].dt, len(self.trajectories[0])
        for traj in self.trajectories:
            if traj.dt != dt0 or len(traj) != n0:
                raise InvalidInputError("all trajectories must share dt and length")

    @property
    def dt(self) -> float:
        return self.trajectories[0].dt

    def indices(self, tag: str) -> list[int]:
        return [i for i, t in enumerate(self.split) if t == tag]

    def subset(self, tag: str) -> Iterator[Trajectory]:
        for i in self.indices(tag):
            yield self.trajectories[i]


def derivative_labels(traj: Trajectory) -> list[tuple[SystemState, np.ndarray]]:
    """Forward-difference labelled pairs (z_t, (z_{t+1} - z_t)/dt).

    The forward difference matches the forward-Euler rollout used for learned
    models, so z_t + dt*dz_t reconstructs z_{t+1} up to float round-trip.
    """
    Z, dZ = derivative_label_arrays(traj)
    return [(SystemState.from_array(z), dz) for z, dz in zip(Z, dZ)]


def derivative_label_arrays(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized form of `derivative_labels`: arrays (N, 10), (N, 10)."""
    if len(traj) < 2:
        raise InvalidInputError("trajectory too short for derivative labels")
    Z = traj.states[:-1]
    dZ = (traj.states[1:] - Z) / traj.dt
    return Z.copy(), dZ


def split_dataset(ds: Dataset, train_fraction: float, seed: int) -> Dataset:
    """Retag trajectories train/test by a seeded shuffle; floor(fraction*N) train."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidInputError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(ds.trajectories)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(train_fraction * n))
    tags = ["test"] * n
    for i in order[:n_train]:
        tags[i] = "train"
    return Dataset(trajectories=ds.trajectories, split=tuple(tags), metadata=dict(ds.metadata))
