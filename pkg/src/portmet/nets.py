"""Structure-preserving bulk network.

One dense trunk maps a (normalized) subsystem state to four heads that
assemble the closed-system part of the evolution:

    L  — skew-symmetric, built from a strict lower triangle: L = T - T^T
    M  — positive semi-definite by construction: M = D D^T, D lower-triangular
    gradE, gradS — direct vector heads for the energy/entropy gradients

    z_dot = L gradE + M gradS

Skew-symmetry and PSD-ness hold for arbitrary parameter values; the
degeneracy residuals L gradS and M gradE are left to the loss (soft
constraint), never hard-zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DenseNet, ParamStore, Tape, Var
from .errors import InvalidInputError


@dataclass(frozen=True)
class Normalization:
    """Per-component affine input map fitted on training data."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, floor: float = 1e-8) -> "Normalization":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        std = X.std(axis=0)
        return cls(mean=X.mean(axis=0), std=np.maximum(std, floor))

    @classmethod
    def identity(cls, dim: int) -> "Normalization":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(mean=np.asarray(d["mean"], dtype=float), std=np.asarray(d["std"], dtype=float))


@dataclass(frozen=True)
class BulkNetConfig:
    state_dim: int = 5
    hidden: tuple[int, ...] = (64, 64)

    @property
    def n_skew(self) -> int:
        return self.state_dim * (self.state_dim - 1) // 2

    @property
    def n_chol(self) -> int:
        return self.state_dim * (self.state_dim + 1) // 2

    @property
    def out_dim(self) -> int:
        return self.n_skew + self.n_chol + 2 * self.state_dim

    def to_dict(self) -> dict:
        return {"state_dim": self.state_dim, "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, d: dict) -> "BulkNetConfig":
        return cls(state_dim=d["state_dim"], hidden=tuple(d["hidden"]))


@dataclass
class MetriplecticVars:
    """Taped operator bundle; `.values()` strips to plain arrays."""

    L: Var
    M: Var
    gradE: Var
    gradS: Var
    z_dot: Var

    def values(self) -> "MetriplecticOutput":
        return MetriplecticOutput(L=self.L.value, M=self.M.value, gradE=self.gradE.value,
                                  gradS=self.gradS.value, z_dot=self.z_dot.value)


@dataclass(frozen=True)
class MetriplecticOutput:
    """Evaluated operator bundle: z_dot = L gradE + M gradS."""

    L: np.ndarray
    M: np.ndarray
    gradE: np.ndarray
    gradS: np.ndarray
    z_dot: np.ndarray


class BulkNet:
    """Trunk + heads for one subsystem's closed (bulk) dynamics."""

    def __init__(self, name: str, cfg: BulkNetConfig = BulkNetConfig()):
        self.name = name
        self.cfg = cfg
        self.trunk = DenseNet(name, (cfg.state_dim, *cfg.hidden, cfg.out_dim))

    def init_params(self, rng: np.random.Generator, out_scale: float = 0.1) -> dict[str, np.ndarray]:
        return self.trunk.init_params(rng, out_scale=out_scale)

    def heads(self, pvars: dict[str, Var], z_norm: Var) -> MetriplecticVars:
        """Assemble (L, M, gradE, gradS, z_dot) on the tape of `z_norm`."""
        n = self.cfg.state_dim
        out = self.trunk.apply(pvars, z_norm)
        a, b, c = self.cfg.n_skew, self.cfg.n_skew + self.cfg.n_chol, self.cfg.n_skew + self.cfg.n_chol + n
        tri = ad.tril_embed(ad.slice_last(out, 0, a), n, strict=True)
        L = ad.sub(tri, ad.transpose_last2(tri))
        D = ad.tril_embed(ad.slice_last(out, a, b), n, strict=False)
        M = ad.matmul(D, ad.transpose_last2(D))
        gradE = ad.slice_last(out, b, c)
        gradS = ad.slice_last(out, c, c + n)
        z_dot = ad.add(ad.matvec(L, gradE), ad.matvec(M, gradS))
        return MetriplecticVars(L=L, M=M, gradE=gradE, gradS=gradS, z_dot=z_dot)


def eval_bulk(net: BulkNet, params: ParamStore | dict, norm: Normalization, z: np.ndarray) -> MetriplecticOutput:
    """Plain (non-differentiating) bulk evaluation; accepts (5,) or (B, 5)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    if z.shape[-1] != net.cfg.state_dim:
        raise InvalidInputError(f"state dim {z.shape[-1]} != {net.cfg.state_dim}")
    if not np.isfinite(z).all():
        raise InvalidInputError(f"non-finite input state: {z}")
    tape = Tape()
    pvars = tape.params(params)
    bundle = net.heads(pvars, tape.const(np.atleast_2d(norm.apply(z)))).values()
    if single:
        bundle = MetriplecticOutput(L=bundle.L[0], M=bundle.M[0], gradE=bundle.gradE[0],
                                    gradS=bundle.gradS[0], z_dot=bundle.z_dot[0])
    return bundle


def degeneracy_residual(out: MetriplecticOutput) -> tuple[np.ndarray, np.ndarray]:
    """(L gradS, M gradE): zero iff the bulk operators are exactly degenerate."""
    r_L = np.matmul(out.L, out.gradS[..., None])[..., 0]
    r_M = np.matmul(out.M, out.gradE[..., None])[..., 0]
    return r_L, r_M


def energy_entropy_rates(out: MetriplecticOutput) -> tuple[np.ndarray, np.ndarray]:
    """(<gradE, z_dot>, <gradS, z_dot>) for conservation/production audits."""
    dE = (out.gradE * out.z_dot).sum(-1)
    dS = (out.gradS * out.z_dot).sum(-1)
    return dE, dS
