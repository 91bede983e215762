"""Least-squares gradient-boosted trees predicting energy from fingerprints.

The cheap regressor stands in for the expensive forward model when ranking
expansion candidates.  Features are the augmented count fingerprint of all
reactants in a particle (steps summed), so predictions are invariant to
reactant order and route shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._kernels import N_BINS, build_tree, forest_predict

SERIAL_VERSION = 1


@dataclass
class GbmModel:
    base: float
    nu: float
    max_depth: int
    columns: np.ndarray  # fingerprint indices used as features, sorted
    feat: np.ndarray  # per-node split feature (-1 = leaf), all trees concatenated
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    val: np.ndarray
    roots: np.ndarray  # root node index per tree
    energy_cap: float = 1.0
    mse_path: list = field(default_factory=list)  # training MSE after each tree
    max_train_abs_residual: float = 0.0

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    def _predict_cols(self, xq: np.ndarray) -> np.ndarray:
        # xq rows already gathered to self.columns
        raw = forest_predict(
            xq, self.feat, self.thr, self.left, self.right, self.val,
            self.roots, self.base, self.nu,
        )
        return np.clip(raw, 0.0, self.energy_cap)

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Clipped energy predictions for rows of full-width count features."""
        features = np.asarray(features)
        if features.ndim == 1:
            features = features[None, :]
        xq = np.ascontiguousarray(features[:, self.columns], dtype=np.int64)
        return self._predict_cols(xq)

    # -- persistence: versioned JSON so pre-trained models can be reused ----

    def save(self, path) -> None:
        trees = []
        for t, root in enumerate(self.roots):
            end = self.roots[t + 1] if t + 1 < len(self.roots) else len(self.feat)
            trees.append(
                {
                    "feat": self.feat[root:end].tolist(),
                    "thr": self.thr[root:end].tolist(),
                    "left": (self.left[root:end] - root).tolist(),
                    "right": (self.right[root:end] - root).tolist(),
                    "val": self.val[root:end].tolist(),
                }
            )
        doc = {
            "version": SERIAL_VERSION,
            "base": self.base,
            "nu": self.nu,
            "max_depth": self.max_depth,
            "energy_cap": self.energy_cap,
            "columns": self.columns.tolist(),
            "max_train_abs_residual": self.max_train_abs_residual,
            "trees": trees,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GbmModel":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("version") != SERIAL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        feat, thr, left, right, val, roots = [], [], [], [], [], []
        offset = 0
        for tree in doc["trees"]:
            roots.append(offset)
            k = len(tree["feat"])
            feat.extend(tree["feat"])
            thr.extend(tree["thr"])
            left.extend(x + offset if x >= 0 else -1 for x in tree["left"])
            right.extend(x + offset if x >= 0 else -1 for x in tree["right"])
            val.extend(tree["val"])
            offset += k
        return cls(
            base=doc["base"],
            nu=doc["nu"],
            max_depth=doc["max_depth"],
            columns=np.array(doc["columns"], dtype=np.int64),
            feat=np.array(feat, dtype=np.int32),
            thr=np.array(thr, dtype=np.int32),
            left=np.array(left, dtype=np.int32),
            right=np.array(right, dtype=np.int32),
            val=np.array(val, dtype=np.float64),
            roots=np.array(roots, dtype=np.int64),
            energy_cap=doc["energy_cap"],
            max_train_abs_residual=doc["max_train_abs_residual"],
        )


def fit_gbm(
    features: np.ndarray,
    targets: np.ndarray,
    n_trees: int = 100,
    max_depth: int = 4,
    nu: float = 0.1,
    min_leaf: int = 1,
    energy_cap: float = 1.0,
    seed: int = 0,
) -> GbmModel:
    """Boosted residual fitting with greedy variance-reduction splits.

    `features` holds raw count vectors (rows = particles); split candidates
    are all columns that vary in the training set.  The procedure has no
    random component, so any seed reproduces the same tree list.
    """
    del seed  # fit is deterministic; kept for interface symmetry
    features = np.asarray(features)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(targets)
    if n < 2:
        raise ValueError("need at least 2 training rows")
    varying = np.nonzero(features.max(axis=0) != features.min(axis=0))[0]
    columns = varying.astype(np.int64)
    base = float(np.mean(targets))
    xb = np.ascontiguousarray(
        np.clip(features[:, columns], 0, N_BINS - 1), dtype=np.uint8
    )

    feats, thrs, lefts, rights, vals, roots = [], [], [], [], [], []
    pred = np.full(n, base)
    offset = 0
    mse_path = []
    train_pred = np.empty(n, np.float64)
    if columns.size == 0:
        n_trees = 0  # degenerate: nothing to split on, base-only model
    for _ in range(n_trees):
        residual = targets - pred
        work = np.arange(n, dtype=np.int64)
        feat, thr, left, right, val, count = build_tree(
            xb, residual, work, max_depth, min_leaf, train_pred
        )
        roots.append(offset)
        feats.append(feat[:count].copy())
        thrs.append(thr[:count].copy())
        lefts.append(np.where(feat[:count] >= 0, left[:count] + offset, -1))
        rights.append(np.where(feat[:count] >= 0, right[:count] + offset, -1))
        vals.append(val[:count].copy())
        offset += count
        pred = pred + nu * train_pred
        mse_path.append(float(np.mean((targets - pred) ** 2)))

    if roots:
        model = GbmModel(
            base=base,
            nu=nu,
            max_depth=max_depth,
            columns=columns,
            feat=np.concatenate(feats).astype(np.int32),
            thr=np.concatenate(thrs).astype(np.int32),
            left=np.concatenate(lefts).astype(np.int32),
            right=np.concatenate(rights).astype(np.int32),
            val=np.concatenate(vals),
            roots=np.array(roots, dtype=np.int64),
            energy_cap=energy_cap,
            mse_path=mse_path,
        )
    else:
        model = GbmModel(
            base=base,
            nu=nu,
            max_depth=max_depth,
            columns=columns,
            feat=np.empty(0, np.int32),
            thr=np.empty(0, np.int32),
            left=np.empty(0, np.int32),
            right=np.empty(0, np.int32),
            val=np.empty(0, np.float64),
            roots=np.empty(0, np.int64),
            energy_cap=energy_cap,
            mse_path=[float(np.mean((targets - pred) ** 2))],
        )
    model.max_train_abs_residual = float(np.max(np.abs(targets - pred)))
    return model


def query_matrix(model: GbmModel, fps) -> np.ndarray:
    """Gather sparse fingerprint counts into the model's feature columns."""
    cols = model.columns
    out = np.zeros((len(fps), cols.size), np.int64)
    for i, fp in enumerate(fps):
        if fp.on_bits.size == 0 or cols.size == 0:
            continue
        pos = np.searchsorted(fp.on_bits, cols)
        pos_clipped = np.minimum(pos, fp.on_bits.size - 1)
        hit = fp.on_bits[pos_clipped] == cols
        out[i, hit] = fp.counts[pos_clipped[hit]]
    return out


def predict_energy_batch(model: GbmModel, fps) -> np.ndarray:
    """Predicted energies for a batch of augmented fingerprints."""
    return model._predict_cols(np.ascontiguousarray(query_matrix(model, fps)))


def predict_energy(model: GbmModel, fp) -> float:
    """Predicted energy for one particle's augmented fingerprint."""
    return float(predict_energy_batch(model, [fp])[0])
