"""Shared per-site input encoding for the recurrent models.

Each consumed site turns into the concatenation of a learned address
embedding, a distribution-kind one-hot, and a small tanh embedding of the
(normalized) value.  The surrogate and the proposal network both use this
layout, each with its own parameter store.
"""

from __future__ import annotations

import numpy as np

from .numerics.params import ParamStore
from .numerics.tensor import Var, add, concat_cols, constant, matmul, tanh, tile_rows

__all__ = ["KIND_ORDER", "kind_onehot", "SiteEmbedder"]

KIND_ORDER = ("normal", "uniform", "categorical")
_KIND_INDEX = {k: i for i, k in enumerate(KIND_ORDER)}

# Learned heads with bounded support share the "uniform" kind slot.
_KIND_ALIASES = {"squashed_normal": "uniform"}


def kind_onehot(kind: str) -> np.ndarray:
    out = np.zeros(len(KIND_ORDER))
    out[_KIND_INDEX[_KIND_ALIASES.get(kind, kind)]] = 1.0
    return out


class SiteEmbedder:
    """Owns the address embeddings and the shared value embedding layer."""

    def __init__(self, store: ParamStore, addr_dim: int, value_dim: int,
                 prefix: str = ""):
        self.store = store
        self.addr_dim = addr_dim
        self.value_dim = value_dim
        self.prefix = prefix
        if self._vname("w") not in store:
            store.add_matrix(self._vname("w"), 1, value_dim)
            store.add_zeros(self._vname("b"), (value_dim,))

    def _vname(self, leaf: str) -> str:
        return f"{self.prefix}valemb/{leaf}"

    def _ename(self, addr: str) -> str:
        return f"{self.prefix}emb/{addr}"

    @property
    def width(self) -> int:
        return self.addr_dim + len(KIND_ORDER) + self.value_dim

    def ensure_address(self, addr: str) -> None:
        name = self._ename(addr)
        if name not in self.store:
            self.store.add_embedding(name, self.addr_dim)

    def rows_np(self, addr: str, kind: str, values: np.ndarray) -> np.ndarray:
        """(B,) normalized values -> (B, width) input rows, plain arrays."""
        p = self.store.params
        b = values.shape[0]
        v = values[:, None]
        vemb = np.tanh(v @ p[self._vname("w")] + p[self._vname("b")])
        out = np.empty((b, self.width))
        out[:, : self.addr_dim] = p[self._ename(addr)]
        out[:, self.addr_dim : self.addr_dim + len(KIND_ORDER)] = kind_onehot(kind)
        out[:, self.addr_dim + len(KIND_ORDER) :] = vemb
        return out

    def rows_var(self, addr: str, kind: str, values: np.ndarray) -> Var:
        """Same as rows_np but on the tape, for training."""
        s = self.store
        b = values.shape[0]
        vemb = tanh(
            add(matmul(constant(values[:, None]), s.var(self._vname("w"))),
                s.var(self._vname("b")))
        )
        onehot = np.broadcast_to(kind_onehot(kind), (b, len(KIND_ORDER)))
        return concat_cols(
            [tile_rows(s.var(self._ename(addr)), b), constant(onehot.copy()), vemb]
        )
