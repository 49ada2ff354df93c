"""
Weighted implicit-feedback matrix factorization by alternating least squares.

Every (user, item) cell is a squared-error term. Stored pairs have preference
1 and confidence ``1 + w``; all other cells have preference 0 and
confidence 1. Row solves use the usual Gram-matrix trick so the cost of a
row is proportional to its number of stored pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from numba import njit

from .weights import WeightMatrix

_log = logging.getLogger(__name__)

__all__ = ["AlsConfig", "FactorModel", "train", "objective", "solve_row", "recommend", "save_model", "load_model"]


@dataclass(frozen=True)
class AlsConfig:
    n_factors: int = 32
    reg_lambda: float = 0.01
    n_iterations: int = 15
    seed: int = 0
    init_scale: float = 0.01

    def __post_init__(self):
        if self.n_factors < 1:
            raise ValueError("n_factors must be >= 1")
        if not self.reg_lambda > 0:
            raise ValueError("reg_lambda must be positive")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")


@dataclass(eq=False)
class FactorModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    config: AlsConfig

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    def scores(self, user: int) -> np.ndarray:
        return self.item_factors @ self.user_factors[user]


def solve_row(other: np.ndarray, cols: np.ndarray, w: np.ndarray, reg: float, gram: np.ndarray | None = None):
    """
    Exact minimiser for one row given the opposite factor matrix.

    Solves ``(G'G + G_s' diag(w) G_s + reg I) x = G_s' (1 + w)`` where ``G_s``
    holds the rows of ``other`` at the stored columns ``cols``.
    """
    if gram is None:
        gram = other.T @ other
    d = other.shape[1]
    gs = other[cols]
    A = gram + (gs.T * w) @ gs + reg * np.eye(d)
    b = gs.T @ (1.0 + w)
    return np.linalg.solve(A, b)


@njit(cache=True)
def _half_sweep(indptr, indices, data, other, gram, reg, out):
    d = other.shape[1]
    n = out.shape[0]
    for u in range(n):
        start = indptr[u]
        stop = indptr[u + 1]
        if start == stop:
            for f in range(d):
                out[u, f] = 0.0
            continue
        A = gram.copy()
        b = np.zeros(d)
        for f in range(d):
            A[f, f] += reg
        for p in range(start, stop):
            j = indices[p]
            w = data[p]
            for f in range(d):
                yf = other[j, f]
                b[f] += (1.0 + w) * yf
                wy = w * yf
                for g in range(d):
                    A[f, g] += wy * other[j, g]
        out[u] = np.linalg.solve(A, b)


def _sweep(mat: sps.csr_matrix, other: np.ndarray, reg: float, out: np.ndarray):
    gram = other.T @ other
    _half_sweep(mat.indptr, mat.indices, mat.data, other, gram, reg, out)
    bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        _log.warning("%d singular row systems; retrying with diagonal jitter", int(bad.sum()))
        for u in np.flatnonzero(bad):
            cols = mat.indices[mat.indptr[u] : mat.indptr[u + 1]]
            w = mat.data[mat.indptr[u] : mat.indptr[u + 1]]
            out[u] = solve_row(other, cols, w, 2 * reg, gram)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite factors after jitter retry")


def init_factors(shape: tuple[int, int], cfg: AlsConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    X = rng.normal(0.0, cfg.init_scale, (shape[0], cfg.n_factors))
    Y = rng.normal(0.0, cfg.init_scale, (shape[1], cfg.n_factors))
    return X, Y


def train(w: WeightMatrix, cfg: AlsConfig, *, callback=None) -> FactorModel:
    """
    Fit user and item factors.

    ``callback(stage, model)`` is invoked after initialisation and after every
    half-sweep with ``stage`` one of ``"init"``, ``"users"``, ``"items"``.
    """
    if len(w) == 0:
        raise ValueError("cannot train on an empty weight matrix")
    ui = w.to_csr()
    iu = ui.T.tocsr()
    iu.sort_indices()
    X, Y = init_factors(w.shape, cfg)
    model = FactorModel(X, Y, cfg)
    if callback is not None:
        callback("init", model)
    for _ in range(cfg.n_iterations):
        _sweep(ui, Y, cfg.reg_lambda, X)
        if callback is not None:
            callback("users", model)
        _sweep(iu, X, cfg.reg_lambda, Y)
        if callback is not None:
            callback("items", model)
    return model


def objective(model: FactorModel, w: WeightMatrix) -> float:
    """Full weighted squared-error objective including regularisation."""
    X, Y = model.user_factors, model.item_factors
    s = np.einsum("ij,ij->i", X[w.users], Y[w.items])
    # all cells as if preference 0 with confidence 1, then correct the stored ones
    dense_part = float(np.sum((X.T @ X) * (Y.T @ Y)))
    stored = float(np.sum((1.0 + w.weights) * (1.0 - s) ** 2 - s**2))
    reg = model.config.reg_lambda * (float(np.sum(X * X)) + float(np.sum(Y * Y)))
    return dense_part + stored + reg


def recommend(model: FactorModel, user: int, exclude=(), K: int = 10, candidates=None) -> list[tuple[int, float]]:
    """
    Top-``K`` items by score for ``user``.

    Items in ``exclude`` are never returned; with ``candidates`` given only
    those items are ranked. Ties go to the lower item id.
    """
    if K <= 0:
        return []
    scores = model.scores(user)
    if candidates is None:
        pool = np.arange(model.n_items)
    else:
        pool = np.asarray(sorted(set(int(c) for c in candidates)), dtype=np.int64)
    if len(exclude):
        pool = pool[~np.isin(pool, np.fromiter(exclude, dtype=np.int64, count=len(exclude)))]
    sc = scores[pool]
    order = np.lexsort((pool, -sc))[:K]
    return [(int(pool[i]), float(sc[i])) for i in order]


def save_model(path, model: FactorModel, fmt: str = "npz"):
    """Write factors with their (n_users, n_items, d, seed) header; ``fmt`` is ``npz`` or ``csv``."""
    cfg = model.config
    header = np.array([model.n_users, model.n_items, cfg.n_factors, cfg.seed], dtype=np.int64)
    if fmt == "npz":
        with open(path, "wb") as fh:
            np.savez(
                fh,
                header=header,
                hyper=np.array([cfg.reg_lambda, cfg.n_iterations, cfg.init_scale]),
                user_factors=model.user_factors,
                item_factors=model.item_factors,
            )
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# n_users={model.n_users},n_items={model.n_items},d={cfg.n_factors},seed={cfg.seed}\n")
            fh.write(f"# reg_lambda={cfg.reg_lambda!r},n_iterations={cfg.n_iterations},init_scale={cfg.init_scale!r}\n")
            for side, mat in (("user", model.user_factors), ("item", model.item_factors)):
                for i, row in enumerate(mat):
                    fh.write(side + f",{i}," + ",".join(repr(float(x)) for x in row) + "\n")
    else:
        raise ValueError(f"unknown model format {fmt!r}")


def load_model(path, fmt: str | None = None) -> FactorModel:
    if fmt is None:
        fmt = "csv" if str(path).endswith(".csv") else "npz"
    if fmt == "npz":
        with np.load(path) as z:
            n_u, n_i, d, seed = (int(x) for x in z["header"])
            lam, iters, scale = z["hyper"]
            X, Y = z["user_factors"], z["item_factors"]
    else:
        meta = {}
        X_rows, Y_rows = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("#"):
                    for kv in line[1:].strip().split(","):
                        k, _, v = kv.partition("=")
                        meta[k] = v
                    continue
                side, _, *vals = line.rstrip("\n").split(",")
                (X_rows if side == "user" else Y_rows).append([float(v) for v in vals])
        n_u, n_i, d, seed = (int(meta[k]) for k in ("n_users", "n_items", "d", "seed"))
        lam, iters, scale = float(meta["reg_lambda"]), int(meta["n_iterations"]), float(meta["init_scale"])
        X = np.array(X_rows, dtype=np.float64).reshape(n_u, d)
        Y = np.array(Y_rows, dtype=np.float64).reshape(n_i, d)
    if X.shape != (n_u, d) or Y.shape != (n_i, d):
        raise ValueError(f"{path}: factor shapes disagree with header")
    cfg = AlsConfig(n_factors=d, reg_lambda=float(lam), n_iterations=int(iters), seed=seed, init_scale=float(scale))
    return FactorModel(np.ascontiguousarray(X), np.ascontiguousarray(Y), cfg)
