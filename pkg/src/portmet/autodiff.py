"""Tape-based reverse-mode differentiation over numpy arrays.

Covers exactly the primitives the metriplectic networks need: dense affine
layers, tanh, head slicing, triangular scatter, batched matrix products and
quadratic forms, and reductions. Values are float64 end to end. A Tape
records one forward evaluation eagerly; `Tape.grad` replays it backward and
returns gradients for every named parameter leaf. Tapes are single-use.

Also home to `ParamStore` (named shaped arrays with a flat view) and the
checkpoint format: a JSON file of base64-encoded float64 buffers plus a
sha256 integrity checksum, round-tripping bit-exactly.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ChecksumError, InvalidInputError, InvalidStateError, NumericError

CHECKPOINT_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# tape core

class Var:
    """Handle to a node on a tape; carries the forward value."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape: "Tape", idx: int, value: np.ndarray):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


class Tape:
    """Wengert list for one forward evaluation."""

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list = []
        self._values: list[np.ndarray] = []
        self._param_idx: dict[str, int] = {}
        self._consumed = False

    def _push(self, value, parents: tuple[int, ...], vjp) -> Var:
        value = np.asarray(value, dtype=float)
        self._values.append(value)
        self._parents.append(parents)
        self._vjps.append(vjp)
        return Var(self, len(self._values) - 1, value)

    def param(self, name: str, value: np.ndarray) -> Var:
        """Tracked leaf; gradients are reported under `name`."""
        if name in self._param_idx:
            raise InvalidInputError(f"parameter {name!r} already on tape")
        var = self._push(value, (), None)
        self._param_idx[name] = var.idx
        return var

    def const(self, value) -> Var:
        return self._push(value, (), None)

    def params(self, arrays: "ParamStore | dict[str, np.ndarray]") -> dict[str, Var]:
        items = arrays.items() if isinstance(arrays, dict) else arrays.arrays.items()
        return {name: self.param(name, val) for name, val in items}

    def grad(self, out: Var, seed=None) -> dict[str, np.ndarray]:
        """Gradients of <seed, out> w.r.t. every parameter leaf.

        For a scalar output the seed defaults to 1. The tape is consumed;
        calling grad twice raises.
        """
        if self._consumed:
            raise InvalidStateError("tape already consumed by a backward pass")
        if out.tape is not self:
            raise InvalidStateError("output var belongs to a different tape")
        self._consumed = True
        if seed is None:
            if out.value.shape != ():
                raise InvalidInputError("non-scalar output needs an explicit seed gradient")
            seed = np.asarray(1.0)
        seed = np.asarray(seed, dtype=float)
        if seed.shape != out.value.shape:
            raise InvalidInputError(f"seed shape {seed.shape} != output shape {out.value.shape}")
        adj: list = [None] * len(self._values)
        adj[out.idx] = seed
        for i in range(out.idx, -1, -1):
            g = adj[i]
            if g is None or not self._parents[i]:
                continue
            parent_grads = self._vjps[i](g)
            for p, pg in zip(self._parents[i], parent_grads):
                if pg is None:
                    continue
                adj[p] = pg if adj[p] is None else adj[p] + pg
        out_grads = {}
        for name, idx in self._param_idx.items():
            g = adj[idx]
            out_grads[name] = np.zeros_like(self._values[idx]) if g is None else g
        return out_grads


def _check_same_tape(*vars_: Var) -> Tape:
    tape = vars_[0].tape
    for v in vars_[1:]:
        if v.tape is not tape:
            raise InvalidStateError("vars from different tapes cannot be combined")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives

def add(a: Var, b: Var) -> Var:
    tape = _check_same_tape(a, b)
    return tape._push(a.value + b.value, (a.idx, b.idx),
                      lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)))


def sub(a: Var, b: Var) -> Var:
    tape = _check_same_tape(a, b)
    return tape._push(a.value - b.value, (a.idx, b.idx),
                      lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)))


def mul(a: Var, b: Var) -> Var:
    tape = _check_same_tape(a, b)
    return tape._push(a.value * b.value, (a.idx, b.idx),
                      lambda g: (_unbroadcast(g * b.value, a.value.shape),
                                 _unbroadcast(g * a.value, b.value.shape)))


def scale(a: Var, c: float) -> Var:
    return a.tape._push(c * a.value, (a.idx,), lambda g: (c * g,))


def matmul(a: Var, b: Var) -> Var:
    """np.matmul for stacked matrices; operands must be at least 2-D."""
    tape = _check_same_tape(a, b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise InvalidInputError("matmul operands must be at least 2-D (batch vectors as (n, d))")

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return _unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape)

    return tape._push(np.matmul(a.value, b.value), (a.idx, b.idx), vjp)


def matvec(A: Var, x: Var) -> Var:
    """Batched matrix-vector product: (..., n, n) x (..., n) -> (..., n)."""
    tape = _check_same_tape(A, x)

    def vjp(g):
        gA = g[..., :, None] * x.value[..., None, :]
        gx = np.matmul(np.swapaxes(A.value, -1, -2), g[..., None])[..., 0]
        return _unbroadcast(gA, A.value.shape), _unbroadcast(gx, x.value.shape)

    y = np.matmul(A.value, x.value[..., None])[..., 0]
    return tape._push(y, (A.idx, x.idx), vjp)


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    return a.tape._push(y, (a.idx,), lambda g: (g * (1.0 - y * y),))


def slice_last(a: Var, start: int, stop: int) -> Var:
    def vjp(g):
        full = np.zeros_like(a.value)
        full[..., start:stop] = g
        return (full,)

    return a.tape._push(a.value[..., start:stop], (a.idx,), vjp)


def tril_embed(v: Var, n: int, strict: bool) -> Var:
    """Scatter a packed (strict) lower triangle into (..., n, n)."""
    rows, cols = np.tril_indices(n, -1 if strict else 0)
    if v.value.shape[-1] != len(rows):
        raise InvalidInputError(f"expected last dim {len(rows)}, got {v.value.shape[-1]}")
    out = np.zeros(v.value.shape[:-1] + (n, n))
    out[..., rows, cols] = v.value
    return v.tape._push(out, (v.idx,), lambda g: (g[..., rows, cols],))


def transpose_last2(a: Var) -> Var:
    return a.tape._push(np.swapaxes(a.value, -1, -2), (a.idx,),
                        lambda g: (np.swapaxes(g, -1, -2),))


def sumsq_last(a: Var) -> Var:
    """Squared L2 norm over the last axis."""
    return a.tape._push((a.value ** 2).sum(-1), (a.idx,),
                        lambda g: (2.0 * a.value * g[..., None],))


def rowdot(a: Var, b: Var) -> Var:
    tape = _check_same_tape(a, b)
    return tape._push((a.value * b.value).sum(-1), (a.idx, b.idx),
                      lambda g: (_unbroadcast(b.value * g[..., None], a.value.shape),
                                 _unbroadcast(a.value * g[..., None], b.value.shape)))


def mean_all(a: Var) -> Var:
    size = a.value.size
    return a.tape._push(np.mean(a.value), (a.idx,),
                        lambda g: (np.full(a.value.shape, float(g) / size),))


def sum_all(a: Var) -> Var:
    return a.tape._push(np.sum(a.value), (a.idx,),
                        lambda g: (np.full(a.value.shape, float(g)),))


# ---------------------------------------------------------------------------
# parameters

class ParamStore:
    """Ordered, named float64 arrays with a flat view for optimizers."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = {name: np.asarray(val, dtype=float) for name, val in arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        if not self.arrays:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    def from_flat(self, vec: np.ndarray) -> "ParamStore":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise InvalidInputError(f"flat vector must have length {self.size}, got {vec.shape}")
        out, offset = {}, 0
        for name, val in self.arrays.items():
            out[name] = vec[offset:offset + val.size].reshape(val.shape).copy()
            offset += val.size
        return ParamStore(out)

    @property
    def size(self) -> int:
        return sum(v.size for v in self.arrays.values())


@dataclass(frozen=True)
class DenseNet:
    """Fully connected net: tanh hidden layers, linear output head."""

    name: str
    sizes: tuple[int, ...]  # (in, hidden..., out)

    def param_names(self) -> list[str]:
        out = []
        for i in range(len(self.sizes) - 1):
            out += [f"{self.name}.W{i}", f"{self.name}.b{i}"]
        return out

    def init_params(self, rng: np.random.Generator, out_scale: float = 1.0) -> dict[str, np.ndarray]:
        arrays = {}
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            fan_in, fan_out = self.sizes[i], self.sizes[i + 1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            if i == n_layers - 1:
                W *= out_scale
            arrays[f"{self.name}.W{i}"] = W
            arrays[f"{self.name}.b{i}"] = np.zeros(fan_out)
        return arrays

    def apply(self, pvars: dict[str, Var], x: Var) -> Var:
        if x.value.shape[-1] != self.sizes[0]:
            raise InvalidInputError(f"{self.name}: input dim {x.value.shape[-1]} != {self.sizes[0]}")
        h = x
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            h = add(matmul(h, pvars[f"{self.name}.W{i}"]), pvars[f"{self.name}.b{i}"])
            if i < n_layers - 1:
                h = tanh(h)
        if not np.isfinite(h.value).all():
            raise NumericError(f"{self.name}: non-finite activations")
        return h


def forward(net: DenseNet, params: "ParamStore | dict[str, np.ndarray]", x: np.ndarray) -> tuple[np.ndarray, Tape, Var]:
    """One taped forward pass; returns (output values, tape, output var)."""
    tape = Tape()
    pvars = tape.params(params)
    out = net.apply(pvars, tape.const(np.atleast_2d(x)))
    return out.value, tape, out


def backward(tape: Tape, out: Var, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of <loss_grad, out> for every parameter on the tape."""
    return tape.grad(out, seed=np.broadcast_to(np.asarray(loss_grad, dtype=float), out.value.shape))


# ---------------------------------------------------------------------------
# checkpoints

def _canonical_payload(arrays: dict[str, np.ndarray], meta: dict) -> str:
    enc = {
        name: {
            "shape": list(arr.shape),
            "dtype": "float64",
            "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
        }
        for name, arr in arrays.items()
    }
    return json.dumps({"arrays": enc, "meta": meta}, sort_keys=True)


def save_checkpoint(path, arrays: "ParamStore | dict[str, np.ndarray]", meta: dict | None = None) -> Path:
    if isinstance(arrays, ParamStore):
        arrays = arrays.arrays
    meta = meta or {}
    payload = _canonical_payload(arrays, meta)
    doc = json.loads(payload)
    doc["schema_version"] = CHECKPOINT_SCHEMA_VERSION
    doc["sha256"] = hashlib.sha256(payload.encode()).hexdigest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    return path


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise InvalidInputError(f"unsupported checkpoint schema_version {doc.get('schema_version')}")
    arrays = {}
    for name, entry in doc["arrays"].items():
        buf = base64.b64decode(entry["data"])
        arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(entry["shape"]).astype(float)
    payload = _canonical_payload(arrays, doc["meta"])
    if hashlib.sha256(payload.encode()).hexdigest() != doc["sha256"]:
        raise ChecksumError(f"checkpoint checksum mismatch: {path}")
    return ParamStore(arrays), doc["meta"]
