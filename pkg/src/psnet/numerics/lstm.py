"""Recurrent core and affine layers parameterized through a ParamStore.

Each layer object is a thin view: it owns no arrays, only the names under
which its weights live in the store, so checkpointing and gradient plumbing
stay centralized.  Every layer has a tape path (Var in, Var out) used for
training and a plain-array path used by samplers, which must agree to
round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamStore
from .tensor import Var, add, lstm_cell, lstm_step_np, matmul, tanh

__all__ = ["RecurrentState", "LSTM", "Linear", "lstm_step"]


@dataclass
class RecurrentState:
    """Hidden and cell vectors of one recurrent core instance."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int, batch: int = 1) -> "RecurrentState":
        return cls(np.zeros((batch, hidden)), np.zeros((batch, hidden)))


class LSTM:
    """Single LSTM cell; gate order (input, forget, candidate, output)."""

    def __init__(self, store: ParamStore, prefix: str, input_size: int, hidden: int):
        self.store = store
        self.prefix = prefix
        self.input_size = input_size
        self.hidden = hidden
        if f"{prefix}/wx" not in store:
            store.add_matrix(f"{prefix}/wx", input_size, 4 * hidden)
            store.add_matrix(f"{prefix}/wh", hidden, 4 * hidden)
            store.add_zeros(f"{prefix}/b", (4 * hidden,))

    def step(self, x: Var, h: Var, c: Var) -> tuple[Var, Var]:
        s = self.store
        return lstm_cell(
            x, h, c,
            s.var(f"{self.prefix}/wx"), s.var(f"{self.prefix}/wh"), s.var(f"{self.prefix}/b"),
        )

    def step_np(self, x: np.ndarray, state: RecurrentState) -> RecurrentState:
        p = self.store.params
        h, c = lstm_step_np(
            x, state.h, state.c,
            p[f"{self.prefix}/wx"], p[f"{self.prefix}/wh"], p[f"{self.prefix}/b"],
        )
        return RecurrentState(h, c)


def lstm_step(store: ParamStore, prefix: str, x: np.ndarray, state: RecurrentState):
    """Functional LSTM update: returns (output, new state).

    The output is the new hidden vector; differentiability is provided by
    the tape path (LSTM.step), this entry point is the plain-array variant.
    """
    cell = LSTM(store, prefix, x.shape[-1], state.h.shape[-1])
    new = cell.step_np(x, state)
    return new.h, new


class Linear:
    """Affine layer; optionally zero-initialized (distribution heads)."""

    def __init__(self, store: ParamStore, prefix: str, n_in: int, n_out: int,
                 zero_init: bool = False):
        self.store = store
        self.prefix = prefix
        self.n_in = n_in
        self.n_out = n_out
        if f"{prefix}/w" not in store:
            if zero_init:
                store.add_zeros(f"{prefix}/w", (n_in, n_out))
            else:
                store.add_matrix(f"{prefix}/w", n_in, n_out)
            store.add_zeros(f"{prefix}/b", (n_out,))

    def __call__(self, x: Var) -> Var:
        s = self.store
        return add(matmul(x, s.var(f"{self.prefix}/w")), s.var(f"{self.prefix}/b"))

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        p = self.store.params
        return x @ p[f"{self.prefix}/w"] + p[f"{self.prefix}/b"]


class TanhLayer(Linear):
    """Affine + tanh, used for value embeddings and the observation MLP."""

    def __call__(self, x: Var) -> Var:
        return tanh(super().__call__(x))

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(super().apply_np(x))
