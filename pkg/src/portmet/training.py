"""Minibatch training of a PortModel on single-step derivative labels.

Per snapshot n the loss combines a data term with the soft degeneracy
penalty on the bulk heads,

    loss_n = lambda * ||(dz_n - z_dot_net(z_n)) / sigma_dz||^2
             + sum_i ( ||L_i gradS_i||^2 + ||M_i gradE_i||^2 )

and the batch objective is the mean of loss_n over the batch. sigma_dz is
the per-component standard deviation of the training labels: the state
components span orders of magnitude (entropy rates ~1e-3 vs velocities
~1), and an unweighted norm leaves the entropy rows effectively untrained,
which integrates into runaway entropy drift over a 200-step rollout. The
scaling keeps every loss contribution at a uniform order of magnitude.

Optimization is adaptive moment estimation with bias correction; batches
reshuffle every epoch from a named sub-stream of the root seed, so a run
is reproducible bitwise and resumable mid-stream.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var, load_checkpoint, save_checkpoint
from .errors import InvalidInputError, NumericError
from .nets import BulkNetConfig, Normalization
from .ports import PortModel, SubsystemVars
from .seeds import derive_seed, substream
from .state import Dataset, derivative_label_arrays


class DivergenceError(RuntimeError):
    """Training loss exploded; carries the partial report."""

    def __init__(self, message: str, report: "TrainReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    data_weight: float = 10.0      # lambda in the composite loss
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 2000
    seed: int = 0
    patience: int = 200

    def __post_init__(self):
        if self.data_weight <= 0.0:
            raise InvalidInputError("data_weight must be > 0")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "data_weight", "batch_size", "learning_rate", "beta1", "beta2", "eps",
            "epochs", "seed", "patience")}


@dataclass
class TrainReport:
    """Per-epoch loss curves plus run provenance. Row 0 is the untrained model."""

    epochs: list[int] = field(default_factory=list)
    train_data: list[float] = field(default_factory=list)
    train_deg: list[float] = field(default_factory=list)
    test_data: list[float] = field(default_factory=list)
    test_deg: list[float] = field(default_factory=list)
    wall_clock: float = 0.0
    best_epoch: int = 0
    stopped: str = "completed"
    final_checksum: str = ""

    def record(self, epoch: int, tr_d: float, tr_g: float, te_d: float, te_g: float):
        for v in (tr_d, tr_g, te_d, te_g):
            if not np.isfinite(v):
                raise NumericError(f"non-finite loss recorded at epoch {epoch}")
        self.epochs.append(epoch)
        self.train_data.append(tr_d)
        self.train_deg.append(tr_g)
        self.test_data.append(te_d)
        self.test_deg.append(te_g)

    def total(self, data_weight: float, split: str = "train") -> np.ndarray:
        data = np.array(self.train_data if split == "train" else self.test_data)
        deg = np.array(self.train_deg if split == "train" else self.test_deg)
        return data_weight * data + deg

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_data", "train_deg", "test_data", "test_deg"])
            for row in zip(self.epochs, self.train_data, self.train_deg, self.test_data, self.test_deg):
                w.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])

    def summary(self) -> dict:
        # wall clock intentionally left out: summary files must be
        # bit-identical across reruns with the same seed
        return {
            "epochs_run": self.epochs[-1] if self.epochs else 0,
            "best_epoch": self.best_epoch,
            "stopped": self.stopped,
            "final_train_data": self.train_data[-1] if self.train_data else None,
            "final_train_deg": self.train_deg[-1] if self.train_deg else None,
            "final_test_data": self.test_data[-1] if self.test_data else None,
            "final_test_deg": self.test_deg[-1] if self.test_deg else None,
            "final_checksum": self.final_checksum,
        }

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# loss

def loss_terms(model: PortModel, tape: Tape, pvars: dict[str, Var],
               Z: np.ndarray, dZ: np.ndarray,
               label_scale: np.ndarray | None = None) -> tuple[Var, Var]:
    """Per-sample (data, degeneracy) loss vars for a raw batch (B, 10).

    label_scale holds the per-component sigma_dz weights; None means an
    unweighted norm.
    """
    dim = model.bulk_cfg.state_dim
    dZ = np.atleast_2d(np.asarray(dZ, dtype=float))
    if label_scale is None:
        label_scale = np.ones(2 * dim)
    inv = (1.0 / np.asarray(label_scale, dtype=float)).reshape(1, -1)
    sub1, sub2 = model.system_vars(tape, pvars, Z)
    err1 = ad.mul(ad.sub(sub1.z_dot, tape.const(dZ[:, :dim])), tape.const(inv[:, :dim]))
    err2 = ad.mul(ad.sub(sub2.z_dot, tape.const(dZ[:, dim:])), tape.const(inv[:, dim:]))
    data = ad.add(ad.sumsq_last(err1), ad.sumsq_last(err2))
    deg = None
    for sub in (sub1, sub2):
        r_L = ad.sumsq_last(ad.matvec(sub.bulk.L, sub.bulk.gradS))
        r_M = ad.sumsq_last(ad.matvec(sub.bulk.M, sub.bulk.gradE))
        term = ad.add(r_L, r_M)
        deg = term if deg is None else ad.add(deg, term)
    return data, deg


def batch_loss(model: PortModel, Z: np.ndarray, dZ: np.ndarray, data_weight: float,
               label_scale: np.ndarray | None = None) -> tuple[Var, Tape]:
    """Scalar batch objective on a fresh tape (mean over samples)."""
    tape = Tape()
    pvars = tape.params(model.params)
    data, deg = loss_terms(model, tape, pvars, Z, dZ, label_scale)
    total = ad.mean_all(ad.add(ad.scale(data, data_weight), deg))
    return total, tape


def loss_single(model: PortModel, z: np.ndarray, dz_label: np.ndarray, data_weight: float,
                label_scale: np.ndarray | None = None) -> tuple[float, float, float]:
    """(total, L_data, L_deg) for one labelled snapshot."""
    tape = Tape()
    pvars = tape.params(model.params)
    data, deg = loss_terms(model, tape, pvars, np.atleast_2d(z), dz_label, label_scale)
    l_data = float(data.value[0])
    l_deg = float(deg.value[0])
    total = data_weight * l_data + l_deg
    if not np.isfinite(total):
        raise NumericError(f"non-finite loss at state {np.asarray(z).ravel()}")
    return total, l_data, l_deg


def mean_losses(model: PortModel, Z: np.ndarray, dZ: np.ndarray,
                label_scale: np.ndarray | None = None) -> tuple[float, float]:
    """(mean L_data, mean L_deg) without building gradients."""
    tape = Tape()
    pvars = tape.params(model.params)
    data, deg = loss_terms(model, tape, pvars, Z, dZ, label_scale)
    return float(data.value.mean()), float(deg.value.mean())


def label_scales(dZ: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Per-component sigma_dz over a label set, floored away from zero."""
    return np.maximum(np.asarray(dZ, dtype=float).std(axis=0), floor)


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adaptive moment estimation over a named-array dict."""

    def __init__(self, names: list[str], shapes: dict[str, tuple], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros(shapes[n]) for n in names}
        self.v = {n: np.zeros(shapes[n]) for n in names}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# data plumbing

def stacked_labels(ds: Dataset, tag: str) -> tuple[np.ndarray, np.ndarray]:
    """All labelled snapshot pairs of one split, stacked: (N, 10), (N, 10)."""
    idx = ds.indices(tag)
    if not idx:
        raise InvalidInputError(f"dataset has no {tag!r} trajectories")
    Zs, dZs = [], []
    for i in idx:
        Z, dZ = derivative_label_arrays(ds.trajectories[i])
        Zs.append(Z)
        dZs.append(dZ)
    return np.concatenate(Zs), np.concatenate(dZs)


def fit_norms(Z_train: np.ndarray, dim: int) -> dict[str, Normalization]:
    z1, z2 = Z_train[:, :dim], Z_train[:, dim:]
    return {
        "bulk1": Normalization.fit(z1),
        "bulk2": Normalization.fit(z2),
        "boun1": Normalization.fit(np.concatenate([z1, z2], axis=1)),
        "boun2": Normalization.fit(np.concatenate([z2, z1], axis=1)),
    }


# ---------------------------------------------------------------------------
# trainer state (for exact resume)

@dataclass
class TrainerState:
    params: ParamStore
    best_params: ParamStore
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int
    epoch: int
    best_epoch: int
    best_test_data: float

    def save(self, path):
        arrays = {}
        for prefix, store in (("cur", self.params.arrays), ("best", self.best_params.arrays),
                              ("m", self.m), ("v", self.v)):
            for k, val in store.items():
                arrays[f"{prefix}/{k}"] = val
        meta = {"t": self.t, "epoch": self.epoch, "best_epoch": self.best_epoch,
                "best_test_data": self.best_test_data}
        save_checkpoint(path, arrays, meta=meta)

    @classmethod
    def load(cls, path) -> "TrainerState":
        store, meta = load_checkpoint(path)
        groups: dict[str, dict[str, np.ndarray]] = {"cur": {}, "best": {}, "m": {}, "v": {}}
        for k, val in store.arrays.items():
            prefix, name = k.split("/", 1)
            groups[prefix][name] = val
        return cls(params=ParamStore(groups["cur"]), best_params=ParamStore(groups["best"]),
                   m=groups["m"], v=groups["v"], t=int(meta["t"]), epoch=int(meta["epoch"]),
                   best_epoch=int(meta["best_epoch"]), best_test_data=float(meta["best_test_data"]))


# ---------------------------------------------------------------------------
# training loop

def params_checksum(params: ParamStore) -> str:
    blob = b"".join(np.ascontiguousarray(params.arrays[k], dtype="<f8").tobytes()
                    for k in sorted(params.arrays))
    return hashlib.sha256(blob).hexdigest()


def train(ds: Dataset, cfg: TrainConfig,
          bulk_cfg: BulkNetConfig = BulkNetConfig(),
          boun_hidden: tuple[int, ...] = (64, 64),
          resume: TrainerState | None = None,
          log_every: int = 0) -> tuple[PortModel, TrainReport, TrainerState]:
    """Optimize a fresh (or resumed) PortModel; returns the best-on-test model.

    Deterministic for a fixed config: parameter init and every epoch's batch
    shuffle derive from cfg.seed through named sub-streams.
    """
    t_start = time.perf_counter()
    Z_tr, dZ_tr = stacked_labels(ds, "train")
    Z_te, dZ_te = stacked_labels(ds, "test")
    norms = fit_norms(Z_tr, bulk_cfg.state_dim)
    scale = label_scales(dZ_tr)

    model = PortModel.create(substream(cfg.seed, "init"), bulk_cfg, boun_hidden, norms=norms)
    adam = Adam(model.params.names(), {n: model.params[n].shape for n in model.params.names()},
                lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    start_epoch = 0
    best_epoch = 0
    best_test = np.inf
    best_params = model.params.copy()
    if resume is not None:
        model = model.with_params(resume.params.copy())
        adam.m = {k: v.copy() for k, v in resume.m.items()}
        adam.v = {k: v.copy() for k, v in resume.v.items()}
        adam.t = resume.t
        start_epoch = resume.epoch
        best_epoch = resume.best_epoch
        best_test = resume.best_test_data
        best_params = resume.best_params.copy()

    report = TrainReport()
    tr_d, tr_g = mean_losses(model, Z_tr, dZ_tr, scale)
    te_d, te_g = mean_losses(model, Z_te, dZ_te, scale)
    report.record(start_epoch, tr_d, tr_g, te_d, te_g)
    initial_total = cfg.data_weight * tr_d + tr_g
    if resume is None and te_d < best_test:
        best_test, best_epoch, best_params = te_d, 0, model.params.copy()

    n = len(Z_tr)
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        order = substream(cfg.seed, f"shuffle{epoch}").permutation(n)
        for lo in range(0, n, cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            total, tape = batch_loss(model, Z_tr[sel], dZ_tr[sel], cfg.data_weight, scale)
            grads = tape.grad(total)
            adam.step(model.params.arrays, grads)
        tr_d, tr_g = mean_losses(model, Z_tr, dZ_tr, scale)
        te_d, te_g = mean_losses(model, Z_te, dZ_te, scale)
        report.record(epoch, tr_d, tr_g, te_d, te_g)
        total_now = cfg.data_weight * tr_d + tr_g
        if log_every and (epoch % log_every == 0 or epoch == cfg.epochs):
            print(f"epoch {epoch:5d}  train data {tr_d:.3e} deg {tr_g:.3e}  "
                  f"test data {te_d:.3e} deg {te_g:.3e}")
        if not np.isfinite(total_now) or total_now > 1e6 * max(initial_total, 1e-300):
            report.stopped = "diverged"
            report.wall_clock = time.perf_counter() - t_start
            raise DivergenceError(f"loss diverged at epoch {epoch}: {total_now:.3e}", report)
        if te_d < best_test:
            best_test, best_epoch, best_params = te_d, epoch, model.params.copy()
        if epoch - best_epoch >= cfg.patience:
            report.stopped = "early_stop"
            break

    report.best_epoch = best_epoch
    report.wall_clock = time.perf_counter() - t_start
    report.final_checksum = params_checksum(best_params)
    state = TrainerState(params=model.params.copy(), best_params=best_params.copy(),
                         m={k: v.copy() for k, v in adam.m.items()},
                         v={k: v.copy() for k, v in adam.v.items()},
                         t=adam.t, epoch=report.epochs[-1], best_epoch=best_epoch,
                         best_test_data=float(best_test))
    return model.with_params(best_params), report, state
