"""Named parameter storage, Adam updates, and checkpoint serialization.

A ParamStore owns flat float64 arrays keyed by name plus a gradient buffer
of the same shape per parameter.  Training mutates a private store; a store
shared with sampling workers is treated as an immutable snapshot.

Checkpoints are a single file: one JSON manifest line (format version,
arbitrary config payload, ordered names/shapes) followed by the raw
little-endian float64 bytes of every array in manifest order.  This
round-trips bit-exactly and, unlike zip containers, contains no timestamps,
so identical states produce identical files.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import ConfigurationError, NonFiniteGradientError, SchemaVersionError
from . import rng as rngmod
from .tensor import Var

__all__ = ["ParamStore", "adam_step", "save_checkpoint", "load_checkpoint"]

CHECKPOINT_VERSION = 1

ADAM_DEFAULTS = {"lr": 1e-3, "betas": (0.9, 0.999), "eps": 1e-8, "clip_norm": 10.0}


class ParamStore:
    """Named float64 parameter arrays with parallel gradient buffers."""

    def __init__(self, init_seed: int = 0):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step_count = 0
        self.init_seed = init_seed
        self._vars: dict[str, Var] = {}

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def size(self) -> int:
        return sum(p.size for p in self.params.values())

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ConfigurationError(f"parameter {name!r} already exists")
        arr = np.asarray(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def add_matrix(self, name: str, fan_in: int, fan_out: int) -> None:
        """Uniform +-1/sqrt(fan_in) init, seeded by (store seed, name)."""
        bound = 1.0 / np.sqrt(fan_in)
        gen = rngmod.stream(self.init_seed, f"init/{name}")
        self.add(name, gen.uniform(-bound, bound, size=(fan_in, fan_out)))

    def add_zeros(self, name: str, shape) -> None:
        self.add(name, np.zeros(shape))

    def add_embedding(self, name: str, dim: int) -> None:
        bound = 1.0 / np.sqrt(dim)
        gen = rngmod.stream(self.init_seed, f"init/{name}")
        self.add(name, gen.uniform(-bound, bound, size=(1, dim)))

    def var(self, name: str) -> Var:
        """Leaf graph node for a parameter; adjoints flow into self.grads."""
        v = self._vars.get(name)
        if v is None or v.value is not self.params[name]:
            v = Var(self.params[name], store=self, name=name)
            self._vars[name] = v
        return v

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def values_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params.values())


def adam_step(store: ParamStore, lr=None, betas=None, eps=None, clip_norm=None):
    """Global-norm clipping then bias-corrected Adam on populated gradients.

    Parameters whose gradient buffer is identically zero are left untouched
    (their moments are not decayed either), so an update never moves heads
    that the current batch did not exercise.  Gradients are zeroed and the
    step counter incremented on success; a non-finite gradient rejects the
    whole update and names the offending parameters.
    """
    lr = ADAM_DEFAULTS["lr"] if lr is None else lr
    b1, b2 = ADAM_DEFAULTS["betas"] if betas is None else betas
    eps = ADAM_DEFAULTS["eps"] if eps is None else eps
    clip_norm = ADAM_DEFAULTS["clip_norm"] if clip_norm is None else clip_norm
    if min(lr, b1, b2, eps, clip_norm) <= 0:
        raise ConfigurationError("adam hyperparameters must be positive")

    bad = [n for n, g in store.grads.items() if not np.isfinite(g).all()]
    if bad:
        raise NonFiniteGradientError(bad)

    sq = 0.0
    active = []
    for name, g in store.grads.items():
        s = float((g * g).sum())
        if s > 0.0:
            active.append(name)
            sq += s
    norm = np.sqrt(sq)
    scale = min(1.0, clip_norm / norm) if norm > 0 else 1.0

    store.step_count += 1
    t = store.step_count
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name in active:
        g = store.grads[name] * scale
        m = store.adam_m.get(name)
        if m is None:
            m = store.adam_m[name] = np.zeros_like(g)
        v = store.adam_v.get(name)
        if v is None:
            v = store.adam_v[name] = np.zeros_like(g)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        store.params[name] -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    store.zero_grads()


def save_checkpoint(path, store: ParamStore, config: dict, with_optimizer=True):
    """Write manifest line + raw float64 payload; bit-exact round trip."""
    names = sorted(store.params)
    entries = [["p/" + n, list(store.params[n].shape)] for n in names]
    if with_optimizer:
        for n in sorted(store.adam_m):
            entries.append(["m/" + n, list(store.adam_m[n].shape)])
        for n in sorted(store.adam_v):
            entries.append(["v/" + n, list(store.adam_v[n].shape)])
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": config,
        "step_count": store.step_count,
        "init_seed": store.init_seed,
        "arrays": entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for key, _shape in entries:
            kind, name = key.split("/", 1)
            src = {"p": store.params, "m": store.adam_m, "v": store.adam_v}[kind]
            fh.write(np.ascontiguousarray(src[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (store, config)."""
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            manifest = json.loads(header)
        except json.JSONDecodeError as exc:
            raise SchemaVersionError(f"{path}: not a checkpoint file") from exc
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise SchemaVersionError(
                f"{path}: unknown checkpoint version {manifest.get('format_version')!r}"
            )
        store = ParamStore(init_seed=manifest.get("init_seed", 0))
        store.step_count = manifest["step_count"]
        for key, shape in manifest["arrays"]:
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise SchemaVersionError(f"{path}: truncated payload at {key}")
            arr = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            kind, name = key.split("/", 1)
            if kind == "p":
                store.add(name, arr)
            elif kind == "m":
                store.adam_m[name] = arr
            elif kind == "v":
                store.adam_v[name] = arr
            else:
                raise SchemaVersionError(f"{path}: unknown array kind {key!r}")
    return store, manifest["config"]
