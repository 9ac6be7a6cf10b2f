"""Tabular state feature maps with rows of Euclidean norm at most one."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

KINDS = ("centered_onehot", "centered_basis", "random_bounded", "custom")


@dataclass(frozen=True)
class FeatureMap:
    table: np.ndarray  # (n_states, dim); row s is phi(s)
    kind: str = "custom"

    def __post_init__(self):
        t = np.array(self.table, dtype=float, copy=True)
        if t.ndim != 2 or t.shape[1] < 1:
            raise ParameterError(f"feature table must be 2-D with dim >= 1, got {t.shape}")
        if self.kind not in KINDS:
            raise ParameterError(f"unknown feature kind {self.kind!r}")
        norms = np.linalg.norm(t, axis=1)
        if np.any(norms > 1 + 1e-12):
            raise ParameterError(f"feature rows must have norm <= 1, max is {norms.max()}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "table": self.table.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        return cls(np.array(d["table"], dtype=float), d.get("kind", "custom"))


def phi(fmap: FeatureMap, s: int) -> np.ndarray:
    if not 0 <= s < fmap.n_states:
        raise ParameterError(f"state {s} out of range [0, {fmap.n_states})")
    return fmap.table[s]


def _centered_rows(n_states: int) -> np.ndarray:
    if n_states < 2:
        raise ParameterError("centered features need at least 2 states")
    rows = np.eye(n_states) - 1.0 / n_states
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def make_centered_onehot(n_states: int) -> FeatureMap:
    """phi(s) = normalised (e_s - 1/n), expressed in the ambient R^n.

    The table has rank n - 1 and annihilates the all-ones vector, so the TD
    matrix built from it is singular; use :func:`make_centered_basis` when the
    exploration margin has to be positive.
    """
    return FeatureMap(_centered_rows(n_states), "centered_onehot")


def make_centered_basis(n_states: int) -> FeatureMap:
    """Centered one-hot features written in an orthonormal basis of the
    mean-zero subspace (dim n - 1).

    Inner products between rows are identical to :func:`make_centered_onehot`,
    but the coordinates are full rank. For n = 2 this gives phi = (+1, -1).
    """
    rows = _centered_rows(n_states)
    # Helmert-style basis: column k contrasts the first k+1 states with state k+1
    n = n_states
    basis = np.zeros((n, n - 1))
    for k in range(n - 1):
        basis[: k + 1, k] = 1.0
        basis[k + 1, k] = -(k + 1)
        basis[:, k] /= np.linalg.norm(basis[:, k])
    table = rows @ basis
    # rows are unit vectors inside span(basis); renormalise away the last ulp
    table /= np.linalg.norm(table, axis=1, keepdims=True)
    return FeatureMap(table, "centered_basis")


def make_random_bounded(n_states: int, d: int, seed: int) -> FeatureMap:
    """Gaussian rows rescaled to unit norm."""
    if n_states < 1 or d < 1:
        raise ParameterError("n_states and d must be positive")
    rng = np.random.default_rng(seed)
    t = rng.standard_normal((n_states, d))
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    return FeatureMap(t, "random_bounded")


def make_onehot(n_states: int) -> FeatureMap:
    """Plain tabular indicator features (violates the exploration assumption)."""
    return FeatureMap(np.eye(n_states), "custom")


def m2_features() -> FeatureMap:
    """Scalar fixture for the two-state MDP: phi(0) = +1, phi(1) = -1."""
    return FeatureMap(np.array([[1.0], [-1.0]]), "custom")
