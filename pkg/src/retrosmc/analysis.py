"""Post-hoc prioritization of discovered routes.

Combines the forward model's sequence score with a sparse multinomial
logistic model over reaction classes, clusters route fingerprints with a
BIC-driven split search, and picks per-cluster representatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .chem import augment, fingerprint, parse_smiles

N_CLASSES = 10


# -- sparse multinomial logistic regression ------------------------------------


@dataclass
class ClassModel:
    weights: np.ndarray  # (n_classes, 2 * n_bits)
    bias: np.ndarray  # (n_classes,)
    n_bits: int
    radius: int
    l1_strength: float

    @property
    def sparsity(self) -> float:
        """Fraction of weight entries that are exactly zero."""
        return float(np.mean(self.weights == 0.0))

    def features(self, product: str, reactants) -> np.ndarray:
        """Concatenated count vectors of the product and the reactant set."""
        pf = fingerprint(parse_smiles(product), self.radius, self.n_bits)
        rf = augment(
            [fingerprint(parse_smiles(r), self.radius, self.n_bits) for r in reactants]
        )
        out = np.zeros(2 * self.n_bits)
        out[pf.on_bits] = pf.counts
        out[self.n_bits + rf.on_bits] = rf.counts
        return out

    def probabilities(self, product: str, reactants) -> np.ndarray:
        x = self.features(product, reactants)
        logits = self.weights @ x + self.bias
        logits -= logits.max()
        expv = np.exp(logits)
        return expv / expv.sum()


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _objective(X, Y, W, b, lam):
    logits = X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(logits).sum(axis=1))
    picked = logits[np.arange(len(Y)), Y]
    smooth = float(np.mean(logsumexp - picked))
    return smooth, smooth + lam * float(np.abs(W).sum())


def train_class_model(
    labeled,
    l1_strength: float = 1e-4,
    seed: int = 0,
    radius: int = 2,
    n_bits: int = 2048,
    n_classes: int = N_CLASSES,
    max_iter: int = 400,
    tol: float = 1e-5,
) -> ClassModel:
    """Fit multinomial logistic loss + L1 penalty on the weights.

    Proximal gradient with FISTA momentum and backtracking runs until the
    generalized gradient norm drops below `tol` or the iteration cap; the
    whole path is deterministic (zero init, full-batch gradients), so any
    seed and any duplication of the training set reproduce the same model.
    """
    del seed
    labeled = list(labeled)
    classes = {c for _, _, c in labeled}
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    if any(not 0 <= c < n_classes for c in classes):
        raise ValueError("class id out of range")

    rows, cols, vals = [], [], []
    y = np.empty(len(labeled), dtype=np.int64)
    for i, (product, reactants, cls) in enumerate(labeled):
        pf = fingerprint(parse_smiles(product), radius, n_bits)
        rf = augment(
            [fingerprint(parse_smiles(r), radius, n_bits) for r in reactants]
        )
        for b, c in zip(pf.on_bits.tolist(), pf.counts.tolist()):
            rows.append(i), cols.append(b), vals.append(float(c))
        for b, c in zip(rf.on_bits.tolist(), rf.counts.tolist()):
            rows.append(i), cols.append(n_bits + b), vals.append(float(c))
        y[i] = cls
    X = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(len(labeled), 2 * n_bits)
    )
    n = X.shape[0]
    Yhot = np.zeros((n, n_classes))
    Yhot[np.arange(n), y] = 1.0

    W = np.zeros((n_classes, 2 * n_bits))
    b = np.zeros(n_classes)
    Wz, bz = W.copy(), b.copy()
    t_mom = 1.0
    lip = 1.0

    def grads(Wc, bc):
        P = _softmax_rows(np.asarray(X @ Wc.T) + bc)
        diff = P - Yhot
        gW = np.asarray((X.T @ diff).T) / n
        gb = diff.mean(axis=0)
        return gW, gb

    for _ in range(max_iter):
        smooth_z, _ = _objective(X, y, Wz, bz, l1_strength)
        gW, gb = grads(Wz, bz)
        while True:
            step = 1.0 / lip
            Wn = Wz - step * gW
            Wn = np.sign(Wn) * np.maximum(np.abs(Wn) - step * l1_strength, 0.0)
            bn = bz - step * gb
            dW, db = Wn - Wz, bn - bz
            smooth_n, _ = _objective(X, y, Wn, bn, l1_strength)
            quad = (
                smooth_z
                + float((gW * dW).sum() + (gb * db).sum())
                + lip / 2.0 * float((dW**2).sum() + (db**2).sum())
            )
            if smooth_n <= quad + 1e-12:
                break
            lip *= 2.0
        gnorm = lip * math.sqrt(float(((Wn - Wz) ** 2).sum() + ((bn - bz) ** 2).sum()))
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom)) / 2.0
        Wz = Wn + ((t_mom - 1.0) / t_next) * (Wn - W)
        bz = bn + ((t_mom - 1.0) / t_next) * (bn - b)
        W, b, t_mom = Wn, bn, t_next
        if gnorm <= tol:
            break
    return ClassModel(W, b, n_bits, radius, l1_strength)


# -- route scoring -------------------------------------------------------------


@dataclass(frozen=True)
class RouteScore:
    gamma: float
    alpha: float
    best_class: int
    best_class_prob: float


def _combined_alpha(alphas) -> float:
    out = 1.0
    for a in alphas:
        out *= a
    return out


def score_route(final_inputs, alphas, product, cm: ClassModel) -> RouteScore:
    """Sequence score times the most probable reaction-class probability.

    Multi-step routes multiply per-step sequence scores and classify the
    final, target-forming step (its full input reactant set).
    """
    alpha = _combined_alpha(alphas)
    if product is None:
        return RouteScore(0.0, alpha, -1, 0.0)
    probs = cm.probabilities(product, final_inputs)
    best = int(np.argmax(probs))
    return RouteScore(alpha * float(probs[best]), alpha, best, float(probs[best]))


def score_route_known_class(
    final_inputs, alphas, product, cm: ClassModel, class_id: int
) -> RouteScore:
    """Like score_route but uses the supplied class's probability."""
    if not 0 <= class_id < len(cm.bias):
        raise ValueError(f"class id {class_id} out of range")
    alpha = _combined_alpha(alphas)
    if product is None:
        return RouteScore(0.0, alpha, class_id, 0.0)
    probs = cm.probabilities(product, final_inputs)
    return RouteScore(
        alpha * float(probs[class_id]), alpha, class_id, float(probs[class_id])
    )


# -- x-means --------------------------------------------------------------------


def _bic(X: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    """Spherical-Gaussian BIC of a k-center model of the rows of X."""
    n, d = X.shape
    k = centers.shape[0]
    if n <= k:
        return -math.inf
    sse = float(((X - centers[labels]) ** 2).sum())
    var = max(sse / (n - k), 1e-12)
    ll = -0.5 * n * d * math.log(2.0 * math.pi * var) - 0.5 * (n - k) * d
    for j in range(k):
        nj = int((labels == j).sum())
        if nj > 0:
            ll += nj * math.log(nj / n)
    params = k * (d + 1)
    return ll - 0.5 * params * math.log(n)


def xmeans(points, k_max: int, seed: int = 0):
    """Recursive 2-means splits accepted when they raise the spherical BIC.

    Returns an integer label per input row; never more than k_max clusters.
    """
    from .smc import kmeans  # local import to avoid a module cycle

    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    rng = np.random.default_rng(seed)
    final: list[np.ndarray] = []
    queue: list[np.ndarray] = [np.arange(n)]
    k_current = 1
    while queue:
        idx = queue.pop(0)
        sub = X[idx]
        if len(idx) < 4 or k_current >= k_max:
            final.append(idx)
            continue
        parent_center = sub.mean(axis=0, keepdims=True)
        parent_bic = _bic(sub, np.zeros(len(idx), dtype=np.int64), parent_center)
        labels2, centers2 = kmeans(sub, 2, rng)
        if (labels2 == 0).all() or (labels2 == 1).all():
            final.append(idx)
            continue
        if _bic(sub, labels2, centers2) > parent_bic:
            k_current += 1
            queue.append(idx[labels2 == 0])
            queue.append(idx[labels2 == 1])
        else:
            final.append(idx)
    labels = np.empty(n, dtype=np.int64)
    for cid, idx in enumerate(final):
        labels[idx] = cid
    return labels


def representatives(assignments: dict, scores: dict) -> dict:
    """Per cluster, the key with the best score; ties by key byte order."""
    best: dict[int, str] = {}
    for key in sorted(assignments):
        cid = assignments[key]
        if key not in scores:
            raise KeyError(f"no score for {key!r}")
        cur = best.get(cid)
        if cur is None or scores[key] > scores[cur]:
            best[cid] = key
    return best
