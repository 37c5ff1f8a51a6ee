"""Composition of bulk and boundary (port) networks into open-system dynamics.

Each subsystem evolves by its own bulk metriplectic field minus a boundary
term fed by the pair state (z_self, z_other):

    z1' = L1 gE1 + M1 gS1 - L_b1 gE_b1 - M_b1 gS_b1      (both ports)
    z2' = L2 gE2 + M2 gS2 - M_b2 gS_b2                   (dissipative port only)

The second subsystem's boundary net has no conservative-port heads at all:
the asymmetry is structural, not learned. Boundary operators use the same
skew/PSD constructions as the bulk; the degeneracy soft-constraint applies
to bulk heads only, since ports may carry reversible entropy flux.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var, load_checkpoint, save_checkpoint
from .errors import ChecksumError, InvalidInputError
from .nets import (BulkNet, BulkNetConfig, MetriplecticOutput, MetriplecticVars,
                   Normalization)

PORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BoundaryNetConfig:
    state_dim: int = 5
    hidden: tuple[int, ...] = (64, 64)
    has_conservative_port: bool = True
    has_dissipative_port: bool = True

    @property
    def in_dim(self) -> int:
        return 2 * self.state_dim

    @property
    def out_dim(self) -> int:
        n = self.state_dim
        dim = 0
        if self.has_conservative_port:
            dim += n * (n - 1) // 2 + n
        if self.has_dissipative_port:
            dim += n * (n + 1) // 2 + n
        return dim

    def to_dict(self) -> dict:
        return {"state_dim": self.state_dim, "hidden": list(self.hidden),
                "has_conservative_port": self.has_conservative_port,
                "has_dissipative_port": self.has_dissipative_port}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryNetConfig":
        return cls(state_dim=d["state_dim"], hidden=tuple(d["hidden"]),
                   has_conservative_port=d["has_conservative_port"],
                   has_dissipative_port=d["has_dissipative_port"])


@dataclass
class BoundaryVars:
    """Taped boundary bundle; absent ports stay None structurally."""

    L: Var | None
    gradE: Var | None
    M: Var | None
    gradS: Var | None
    term: Var  # the port field L_b gE_b + M_b gS_b, to be subtracted


class BoundaryNet:
    def __init__(self, name: str, cfg: BoundaryNetConfig):
        self.name = name
        self.cfg = cfg
        self.trunk = ad.DenseNet(name, (cfg.in_dim, *cfg.hidden, cfg.out_dim))

    def init_params(self, rng: np.random.Generator, out_scale: float = 0.1) -> dict[str, np.ndarray]:
        return self.trunk.init_params(rng, out_scale=out_scale)

    def heads(self, pvars: dict[str, Var], pair_norm: Var) -> BoundaryVars:
        n = self.cfg.state_dim
        out = self.trunk.apply(pvars, pair_norm)
        offset = 0
        L = gradE = M = gradS = None
        cons = diss = None
        if self.cfg.has_conservative_port:
            k = n * (n - 1) // 2
            tri = ad.tril_embed(ad.slice_last(out, offset, offset + k), n, strict=True)
            L = ad.sub(tri, ad.transpose_last2(tri))
            gradE = ad.slice_last(out, offset + k, offset + k + n)
            cons = ad.matvec(L, gradE)
            offset += k + n
        if self.cfg.has_dissipative_port:
            k = n * (n + 1) // 2
            D = ad.tril_embed(ad.slice_last(out, offset, offset + k), n, strict=False)
            M = ad.matmul(D, ad.transpose_last2(D))
            gradS = ad.slice_last(out, offset + k, offset + k + n)
            diss = ad.matvec(M, gradS)
            offset += k + n
        if cons is not None and diss is not None:
            term = ad.add(cons, diss)
        elif cons is not None:
            term = cons
        elif diss is not None:
            term = diss
        else:
            raise InvalidInputError(f"{self.name}: boundary net with no ports")
        return BoundaryVars(L=L, gradE=gradE, M=M, gradS=gradS, term=term)


@dataclass
class SubsystemVars:
    bulk: MetriplecticVars
    port: BoundaryVars
    z_dot: Var  # full field: bulk z_dot minus port term


@dataclass(frozen=True)
class SubsystemEval:
    """Plain-value subsystem evaluation used by rollouts and audits."""

    bulk: MetriplecticOutput
    port_term: np.ndarray
    z_dot: np.ndarray


class PortModel:
    """Two bulk nets plus two boundary nets and their input normalizations.

    Parameters are namespaced bulk1./bulk2./boun1./boun2. in one ParamStore.
    The nets never share weights: the two pendula differ in mass, rest
    length and heat capacity.
    """

    NAMES = ("bulk1", "bulk2", "boun1", "boun2")

    def __init__(self, bulk_cfg: BulkNetConfig, boun_hidden: tuple[int, ...],
                 params: ParamStore, norms: dict[str, Normalization]):
        self.bulk_cfg = bulk_cfg
        self.boun_hidden = tuple(boun_hidden)
        self.boun1_cfg = BoundaryNetConfig(state_dim=bulk_cfg.state_dim, hidden=self.boun_hidden,
                                           has_conservative_port=True, has_dissipative_port=True)
        # the first pendulum exerts no conservative action on the second:
        # those heads do not exist, independent of any parameter values
        self.boun2_cfg = BoundaryNetConfig(state_dim=bulk_cfg.state_dim, hidden=self.boun_hidden,
                                           has_conservative_port=False, has_dissipative_port=True)
        self.bulk1 = BulkNet("bulk1", bulk_cfg)
        self.bulk2 = BulkNet("bulk2", bulk_cfg)
        self.boun1 = BoundaryNet("boun1", self.boun1_cfg)
        self.boun2 = BoundaryNet("boun2", self.boun2_cfg)
        self.params = params
        missing = [k for k in self.NAMES if k not in norms]
        if missing:
            raise InvalidInputError(f"missing normalizations: {missing}")
        self.norms = norms
        expected = self.param_names()
        if set(params.names()) != set(expected):
            raise InvalidInputError("parameter store does not match network layout "
                                    f"(expected {len(expected)} arrays, got {len(params.names())})")

    # -- construction -------------------------------------------------------

    def param_names(self) -> list[str]:
        return (self.bulk1.trunk.param_names() + self.bulk2.trunk.param_names()
                + self.boun1.trunk.param_names() + self.boun2.trunk.param_names())

    @classmethod
    def create(cls, rng: np.random.Generator, bulk_cfg: BulkNetConfig = BulkNetConfig(),
               boun_hidden: tuple[int, ...] = (64, 64),
               norms: dict[str, Normalization] | None = None,
               out_scale: float = 0.1) -> "PortModel":
        """Fresh model with seeded parameters (draw order fixed: bulk1, bulk2, boun1, boun2)."""
        dim = bulk_cfg.state_dim
        norms = norms or cls.identity_norms(dim)
        nets = (
            BulkNet("bulk1", bulk_cfg),
            BulkNet("bulk2", bulk_cfg),
            BoundaryNet("boun1", BoundaryNetConfig(state_dim=dim, hidden=tuple(boun_hidden))),
            BoundaryNet("boun2", BoundaryNetConfig(state_dim=dim, hidden=tuple(boun_hidden),
                                                   has_conservative_port=False)),
        )
        arrays: dict[str, np.ndarray] = {}
        for net in nets:
            arrays.update(net.init_params(rng, out_scale=out_scale))
        return cls(bulk_cfg, boun_hidden, params=ParamStore(arrays), norms=norms)

    @staticmethod
    def identity_norms(dim: int) -> dict[str, Normalization]:
        return {"bulk1": Normalization.identity(dim), "bulk2": Normalization.identity(dim),
                "boun1": Normalization.identity(2 * dim), "boun2": Normalization.identity(2 * dim)}

    def with_params(self, params: ParamStore) -> "PortModel":
        return PortModel(self.bulk_cfg, self.boun_hidden, params=params, norms=self.norms)

    def zeroed(self, prefixes: tuple[str, ...] = NAMES) -> "PortModel":
        """Copy with every parameter under the given name prefixes set to zero."""
        arrays = {}
        for name, val in self.params.arrays.items():
            arrays[name] = np.zeros_like(val) if name.startswith(tuple(p + "." for p in prefixes)) else val.copy()
        return self.with_params(ParamStore(arrays))

    # -- taped assembly (training path) -------------------------------------

    def system_vars(self, tape: Tape, pvars: dict[str, Var], Z: np.ndarray) -> tuple[SubsystemVars, SubsystemVars]:
        """Assemble both subsystem fields for a raw state batch Z (B, 10)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        dim = self.bulk_cfg.state_dim
        if Z.shape[-1] != 2 * dim:
            raise InvalidInputError(f"system state dim {Z.shape[-1]} != {2 * dim}")
        z1, z2 = Z[:, :dim], Z[:, dim:]
        pair1 = np.concatenate([z1, z2], axis=1)
        pair2 = np.concatenate([z2, z1], axis=1)
        bulk1 = self.bulk1.heads(pvars, tape.const(self.norms["bulk1"].apply(z1)))
        bulk2 = self.bulk2.heads(pvars, tape.const(self.norms["bulk2"].apply(z2)))
        port1 = self.boun1.heads(pvars, tape.const(self.norms["boun1"].apply(pair1)))
        port2 = self.boun2.heads(pvars, tape.const(self.norms["boun2"].apply(pair2)))
        sub1 = SubsystemVars(bulk=bulk1, port=port1, z_dot=ad.sub(bulk1.z_dot, port1.term))
        sub2 = SubsystemVars(bulk=bulk2, port=port2, z_dot=ad.sub(bulk2.z_dot, port2.term))
        return sub1, sub2

    # -- plain evaluation ----------------------------------------------------

    def eval_subsystems(self, Z: np.ndarray) -> tuple[SubsystemEval, SubsystemEval]:
        tape = Tape()
        pvars = tape.params(self.params)
        sub1, sub2 = self.system_vars(tape, pvars, Z)
        return (SubsystemEval(bulk=sub1.bulk.values(), port_term=sub1.port.term.value, z_dot=sub1.z_dot.value),
                SubsystemEval(bulk=sub2.bulk.values(), port_term=sub2.port.term.value, z_dot=sub2.z_dot.value))

    def eval_system(self, Z: np.ndarray) -> np.ndarray:
        """Full 10-dim field; accepts (10,) or (B, 10) and matches the shape."""
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        sub1, sub2 = self.eval_subsystems(Z)
        out = np.concatenate([sub1.z_dot, sub2.z_dot], axis=1)
        return out[0] if single else out

    def eval_subsystem1(self, z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
        z1, z2 = np.asarray(z1, dtype=float), np.asarray(z2, dtype=float)
        single = z1.ndim == 1
        Z = np.concatenate([np.atleast_2d(z1), np.atleast_2d(z2)], axis=1)
        out = self.eval_subsystems(Z)[0].z_dot
        return out[0] if single else out

    def eval_subsystem2(self, z2: np.ndarray, z1: np.ndarray) -> np.ndarray:
        z1, z2 = np.asarray(z1, dtype=float), np.asarray(z2, dtype=float)
        single = z2.ndim == 1
        Z = np.concatenate([np.atleast_2d(z1), np.atleast_2d(z2)], axis=1)
        out = self.eval_subsystems(Z)[1].z_dot
        return out[0] if single else out


# ---------------------------------------------------------------------------
# checkpoint directory: manifest + one sub-checkpoint per net

def save_port_model(model: PortModel, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in PortModel.NAMES:
        sub = {k: v for k, v in model.params.arrays.items() if k.startswith(name + ".")}
        path = save_checkpoint(directory / f"{name}.json", sub, meta={"net": name})
        files[name] = path.name
    manifest = {
        "schema_version": PORT_SCHEMA_VERSION,
        "bulk_cfg": model.bulk_cfg.to_dict(),
        "boun_hidden": list(model.boun_hidden),
        "flags": {"boun1": model.boun1_cfg.to_dict(), "boun2": model.boun2_cfg.to_dict()},
        "norms": {k: v.to_dict() for k, v in model.norms.items()},
        "files": files,
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_port_model(directory) -> PortModel:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise InvalidInputError(f"not a model directory (missing manifest.json): {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema_version") != PORT_SCHEMA_VERSION:
        raise InvalidInputError(f"unsupported model schema_version {manifest.get('schema_version')}")
    if manifest["flags"]["boun2"]["has_conservative_port"]:
        raise ChecksumError("manifest corrupt: boun2 must not carry a conservative port")
    arrays: dict[str, np.ndarray] = {}
    for name in PortModel.NAMES:
        store, _ = load_checkpoint(directory / manifest["files"][name])
        arrays.update(store.arrays)
    norms = {k: Normalization.from_dict(v) for k, v in manifest["norms"].items()}
    return PortModel(BulkNetConfig.from_dict(manifest["bulk_cfg"]),
                     tuple(manifest["boun_hidden"]), params=ParamStore(arrays), norms=norms)
