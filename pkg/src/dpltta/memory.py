"""Per-class pseudo-feature memory with momentum updates.

Rows start as copies of the classifier prototype rows and move toward the
mean confident feature of their class; classes absent from a batch keep
their row untouched. Updates never join the tape.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ContractError


class MemoryBank:
    def __init__(self, W, eta=0.9):
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"eta must lie in [0,1], got {eta}")
        self.eta = eta
        self.features = self._rows(W).copy()
        self.counters = np.zeros(self.features.shape[0], dtype=np.int64)

    @staticmethod
    def _rows(W):
        data = W.data if isinstance(W, Tensor) else np.asarray(W, dtype=np.float64)
        if data.ndim != 2:
            raise ContractError(f"expected a C x d matrix, got shape {data.shape}")
        return data

    @property
    def class_count(self):
        return self.features.shape[0]

    def features_tensor(self):
        return Tensor(self.features.copy())

    def reset(self, W):
        rows = self._rows(W)
        if rows.shape != self.features.shape:
            raise ContractError(
                f"reset shape {rows.shape} does not match bank "
                f"{self.features.shape}")
        self.features = rows.copy()
        self.counters[:] = 0

    def update(self, features, plb):
        data = features.data if isinstance(features, Tensor) else np.asarray(features)
        idx = plb.confident_indices
        if idx.size == 0:
            return self
        labels = plb.pseudo_labels[idx]
        for k in np.unique(labels):
            rows = data[idx[labels == k]]
            self.features[k] = (self.eta * self.features[k]
                                + (1.0 - self.eta) * rows.mean(axis=0))
            self.counters[k] += rows.shape[0]
        return self

    def state_dict(self):
        return {"features": self.features.copy(),
                "counters": self.counters.copy(),
                "eta": self.eta}

    def load_state_dict(self, state):
        feats = np.asarray(state["features"], dtype=np.float64)
        if feats.shape != self.features.shape:
            raise ContractError(
                f"state shape {feats.shape} does not match bank "
                f"{self.features.shape}")
        self.features = feats.copy()
        self.counters = np.asarray(state["counters"], dtype=np.int64).copy()
        self.eta = float(state["eta"])
        return self
