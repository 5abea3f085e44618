"""Soft-margin SVM trained by sequential minimal optimization.

The dual ``min 1/2 a'Qa - e'a`` s.t. ``y'a = 0, 0 <= a <= C`` with
``Q_ij = y_i y_j K_ij`` is solved two variables at a time, picking the pair by
the maximal-violation / second-order gain rule.  Training stops when the
largest KKT violation ``max_up(-y G) - min_low(-y G)`` drops below ``tol``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numba
import numpy as np

TAU = 1e-12


class SvmError(ValueError):
    pass


@numba.njit(cache=True, nogil=True)
def smo_solve(K, y, C, tol, max_iter):
    """Return (alpha, rho, iterations, final violation) for a precomputed kernel."""
    n = K.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    gap = np.inf
    while it < max_iter:
        # i: maximal violator in the "up" set
        g_max = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * grad[t]
                if v > g_max:
                    g_max = v
                    i = t
        # j: best second-order gain in the "low" set
        g_min = np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = -y[t] * grad[t]
                if v < g_min:
                    g_min = v
                if i >= 0:
                    b = g_max - v
                    if b > 0:
                        a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                        if a <= 0:
                            a = TAU
                        gain = -(b * b) / a
                        if gain < best:
                            best = gain
                            j = t
        gap = g_max - g_min
        if i < 0 or j < 0 or gap < tol:
            break
        it += 1
        yi = y[i]
        yj = y[j]
        a = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if a <= 0:
            a = TAU
        old_i = alpha[i]
        old_j = alpha[j]
        if yi != yj:
            delta = (-grad[i] - grad[j]) / a
            diff = old_i - old_j
            ai = old_i + delta
            aj = old_j + delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            delta = (grad[i] - grad[j]) / a
            total = old_i + old_j
            ai = old_i - delta
            aj = old_j + delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
                if aj > C:
                    aj = C
                    ai = total - C
            else:
                if aj < 0:
                    aj = 0.0
                    ai = total
                if ai < 0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj
        di = (ai - old_i) * yi
        dj = (aj - old_j) * yj
        for t in range(n):
            grad[t] += y[t] * (K[t, i] * di + K[t, j] * dj)
    # offset: average over free vectors, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    s = 0.0
    nfree = 0
    for t in range(n):
        yg = y[t] * grad[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            s += yg
    rho = s / nfree if nfree > 0 else 0.5 * (ub + lb)
    return alpha, rho, it, gap


def sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * a @ b.T, 0.0)


def kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: str, gamma: float = 1.0) -> np.ndarray:
    if kernel == "linear":
        return a @ b.T
    if kernel == "rbf":
        return np.exp(-gamma * sq_distances(a, b))
    raise SvmError(f"unknown kernel {kernel!r}")


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


@dataclass
class SvmModel:
    kernel: str
    C: float
    gamma: float
    support_vectors: np.ndarray  # standardized
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    standardizer: Standardizer
    classes: Tuple[str, str]  # (negative, positive)
    iterations: int = 0
    kkt_gap: float = 0.0

    @property
    def n_features(self) -> int:
        return len(self.standardizer.mean)

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n_features:
            raise SvmError(f"model expects {self.n_features} features, got {x.shape[1]}")
        z = self.standardizer.transform(x)
        if len(self.support_vectors) == 0:
            return np.full(len(z), self.bias)
        return kernel_matrix(z, self.support_vectors, self.kernel, self.gamma) @ self.dual_coef + self.bias

    def predict(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Class labels and margins; zero margin goes to the positive class."""
        margin = self.decision_function(x)
        labels = np.where(margin >= 0, self.classes[1], self.classes[0])
        return labels, margin

    def to_dict(self) -> dict:
        return {"kernel": self.kernel, "C": self.C, "gamma": self.gamma, "classes": list(self.classes),
                "bias": self.bias, "dual_coef": self.dual_coef.tolist(),
                "support_vectors": self.support_vectors.tolist(),
                "standardization": {"mean": self.standardizer.mean.tolist(),
                                    "std": self.standardizer.scale.tolist()},
                "iterations": self.iterations, "kkt_gap": self.kkt_gap}

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        st = Standardizer(np.array(d["standardization"]["mean"]), np.array(d["standardization"]["std"]))
        n_feat = len(st.mean)
        return cls(d["kernel"], float(d["C"]), float(d["gamma"]),
                   np.array(d["support_vectors"], dtype=float).reshape(-1, n_feat),
                   np.array(d["dual_coef"], dtype=float), float(d["bias"]), st, tuple(d["classes"]),
                   int(d.get("iterations", 0)), float(d.get("kkt_gap", 0.0)))


def binary_targets(labels, positive: Optional[str] = None) -> Tuple[np.ndarray, Tuple[str, str]]:
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) != 2:
        raise SvmError(f"need exactly two classes, got {classes}")
    if positive is None:
        positive = classes[1]
    negative = classes[0] if classes[1] == positive else classes[1]
    return np.where(labels == positive, 1.0, -1.0), (negative, positive)


def fit_precomputed(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3,
                    max_iter: int = 100_000) -> Tuple[np.ndarray, float, int, float]:
    return smo_solve(np.ascontiguousarray(K, dtype=float), np.ascontiguousarray(y, dtype=float),
                     float(C), float(tol), int(max_iter))


def train_svm(x, labels, kernel: str = "rbf", C: float = 1.0, gamma: float = 1.0, tol: float = 1e-3,
              max_iter: int = 100_000, positive: Optional[str] = None, ids=None) -> SvmModel:
    """Standardize with training statistics, then solve the dual by SMO."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise SvmError("feature matrix must be 2-D")
    bad = np.nonzero(~np.isfinite(x).all(axis=1))[0]
    if len(bad):
        who = ids[bad[0]] if ids is not None else int(bad[0])
        raise SvmError(f"non-finite feature in event {who}")
    y, classes = binary_targets(labels, positive)
    if min((y > 0).sum(), (y < 0).sum()) < 2:
        raise SvmError("need at least two examples per class")
    if not C > 0:
        raise SvmError("C must be positive")
    st = Standardizer.fit(x)
    z = st.transform(x)
    K = kernel_matrix(z, z, kernel, gamma)
    alpha, rho, it, gap = fit_precomputed(K, y, C, tol, max_iter)
    sv = alpha > 0
    return SvmModel(kernel, float(C), float(gamma), z[sv], alpha[sv] * y[sv], float(-rho), st, classes,
                    int(it), float(gap))


def predict(model: SvmModel, x) -> Tuple[np.ndarray, np.ndarray]:
    return model.predict(x)


def save_model(model_or_dict, path: Union[str, Path]) -> None:
    d = model_or_dict.to_dict() if isinstance(model_or_dict, SvmModel) else model_or_dict
    Path(path).write_text(json.dumps(d, sort_keys=True, indent=1) + "\n")
