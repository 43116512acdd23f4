"""RBF-kernel SVM over sparse codes, with survey evaluation artifacts.

Binary models are trained from scratch with a maximal-violating-pair SMO on
the soft-margin dual; multiclass prediction composes one-vs-one binaries by
majority vote.  Hyperparameters come from stratified cross-validated grid
search.  Evaluation produces per-pixel classification maps, ground-truth
column-normalized confusion matrices, and per-class probabilities of correct
classification computed over target halos.

Feature vectors are columns throughout, matching the signal convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .sparse_coding import StopRule, batch_omp

_TAU = 1e-12


class ModelMismatchError(ValueError):
    """Raised when a model is applied with a different dictionary."""


def rbf_kernel(x_i, x_j, gamma: float) -> float:
    """Gaussian kernel exp(-gamma * ||x_i - x_j||^2)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = np.asarray(x_i, dtype=np.float64) - np.asarray(x_j, dtype=np.float64)
    return float(np.exp(-gamma * (d @ d)))


def rbf_kernel_matrix(A, B, gamma: float) -> np.ndarray:
    """Kernel matrix between column sets A (d, na) and B (d, nb)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d2 = (
        np.einsum("ij,ij->j", A, A)[:, None]
        + np.einsum("ij,ij->j", B, B)[None, :]
        - 2.0 * (A.T @ B)
    )
    return np.exp(-gamma * np.maximum(d2, 0.0))


@dataclass
class BinarySvm:
    """One soft-margin binary model (labels +1/-1) in sparse-code space."""

    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    gamma: float
    c: float
    kkt_violation: float
    converged: bool
    n_updates: int
    alpha_balance: float
    objective_trace: list = field(default_factory=list)

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        k = rbf_kernel_matrix(self.support_vectors, X, self.gamma)
        return self.dual_coef @ k + self.bias


@dataclass
class SvmModel:
    """One-vs-one multiclass composition of binary models."""

    classes: np.ndarray
    binaries: dict
    gamma: float
    c: float
    dict_config_hash: int | None = None

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        n = X.shape[1]
        votes = np.zeros((self.classes.size, n), dtype=np.int64)
        index = {c: i for i, c in enumerate(self.classes)}
        for (a, b), model in self.binaries.items():
            dec = model.decision(X)
            votes[index[a]] += dec >= 0
            votes[index[b]] += dec < 0
        return self.classes[np.argmax(votes, axis=0)]


@dataclass
class ClassMap:
    """Predicted class id per survey pixel."""

    labels: np.ndarray
    geometry: tuple[int, int]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        x_cells, y_cells = self.geometry
        if self.labels.size != x_cells * y_cells:
            raise ValueError("label count does not match the grid")

    def grid(self) -> np.ndarray:
        x_cells, y_cells = self.geometry
        return self.labels.reshape(y_cells, x_cells)


@dataclass
class ConfusionMatrix:
    """Column-normalized confusion: columns are ground truth, rows predicted."""

    probabilities: np.ndarray
    counts: np.ndarray
    classes: np.ndarray
    class_names: tuple[str, ...] | None = None
    missing_classes: list = field(default_factory=list)


def svm_train_binary(X, y, c: float, gamma: float, tol: float = 1e-3,
                     max_updates: int = 100_000,
                     track_objective: bool = False) -> BinarySvm:
    """Train a soft-margin RBF SVM by sequential minimal optimization.

    Repeatedly picks the maximal violating pair of dual variables and solves
    the two-variable subproblem exactly, so the dual objective never
    decreases.  Terminates when the largest KKT violation drops below
    ``tol``; hitting the update cap returns the current model flagged as
    unconverged.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise ValueError("binary training needs both labels -1 and +1")
    if c <= 0:
        raise ValueError("c must be positive")
    n = y.size
    K = rbf_kernel_matrix(X, X, gamma)
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of the minimization objective at alpha = 0
    pos = y > 0
    dual_obj = 0.0
    trace = [0.0] if track_objective else []

    converged = False
    n_updates = 0
    m_val = mm_val = 0.0
    for n_updates in range(1, max_updates + 1):
        up = (pos & (alpha < c)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < c))
        vals = -y * G
        m_val = np.max(np.where(up, vals, -np.inf))
        mm_val = np.min(np.where(low, vals, np.inf))
        if m_val - mm_val < tol:
            converged = True
            n_updates -= 1
            break
        i = int(np.argmax(np.where(up, vals, -np.inf)))
        j = int(np.argmin(np.where(low, vals, np.inf)))

        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta <= 0:
            eta = _TAU
        t = (m_val - mm_val) / eta
        # Keep both variables inside the box along the feasible direction.
        t_hi = min(
            c - alpha[i] if y[i] > 0 else alpha[i],
            alpha[j] if y[j] > 0 else c - alpha[j],
        )
        t = min(t, t_hi)
        d_ai = y[i] * t
        d_aj = -y[j] * t
        alpha[i] = min(max(alpha[i] + d_ai, 0.0), c)
        alpha[j] = min(max(alpha[j] + d_aj, 0.0), c)
        G += Q[:, i] * d_ai + Q[:, j] * d_aj
        if track_objective:
            # Exact dual increase of the two-variable step.
            dual_obj += (m_val - mm_val) * t - 0.5 * eta * t * t
            trace.append(dual_obj)

    vals = -y * G
    free = (alpha > _TAU) & (alpha < c - _TAU)
    if free.any():
        bias = float(vals[free].mean())
    else:
        bias = float((m_val + mm_val) / 2.0)
    balance = float(abs(np.sum(alpha * y)))
    sv = alpha > _TAU
    return BinarySvm(
        support_vectors=X[:, sv].copy(),
        dual_coef=(alpha * y)[sv],
        bias=bias,
        gamma=gamma,
        c=c,
        kkt_violation=float(m_val - mm_val),
        converged=converged,
        n_updates=n_updates,
        alpha_balance=balance,
        objective_trace=trace,
    )


def svm_train_multiclass(X, labels, c: float, gamma: float,
                         dict_config_hash: int | None = None) -> SvmModel:
    """One binary model per class pair; prediction is a majority vote."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("need at least two classes")
    binaries = {}
    for a, b in combinations(classes.tolist(), 2):
        sel = (labels == a) | (labels == b)
        y = np.where(labels[sel] == a, 1.0, -1.0)
        binaries[(a, b)] = svm_train_binary(X[:, sel], y, c, gamma)
    return SvmModel(
        classes=classes, binaries=binaries, gamma=gamma, c=c,
        dict_config_hash=dict_config_hash,
    )


def stratified_folds(labels, folds: int) -> np.ndarray:
    """Deterministic stratified fold ids (round-robin within each class).

    If some class has fewer members than ``folds``, the fold count shrinks to
    the smallest class size and a warning is issued.
    """
    labels = np.asarray(labels)
    counts = np.unique(labels, return_counts=True)[1]
    effective = int(min(folds, counts.min()))
    if effective < folds:
        warnings.warn(
            f"shrinking folds from {folds} to {effective}: smallest class has "
            f"{counts.min()} members",
            UserWarning,
        )
    if effective < 2:
        raise ValueError("need at least two folds")
    fold = np.empty(labels.size, dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        fold[idx] = np.arange(idx.size) % effective
    return fold


def cross_validate(X, labels, c_grid, gamma_grid, folds: int = 10,
                   ) -> tuple[float, float, np.ndarray]:
    """Grid search by stratified cross-validation.

    Returns the (C, gamma) pair with the best mean validation accuracy plus
    the full per-fold accuracy array of shape (len(c_grid), len(gamma_grid),
    n_folds).  Ties resolve to the smaller C, then the smaller gamma.
    """
    c_grid = sorted(c_grid)
    gamma_grid = sorted(gamma_grid)
    if not c_grid or not gamma_grid:
        raise ValueError("empty hyperparameter grid")
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    fold = stratified_folds(labels, folds)
    n_folds = int(fold.max()) + 1
    accs = np.zeros((len(c_grid), len(gamma_grid), n_folds))
    for f in range(n_folds):
        val = fold == f
        trn = ~val
        for ic, c in enumerate(c_grid):
            for ig, g in enumerate(gamma_grid):
                model = svm_train_multiclass(X[:, trn], labels[trn], c, g)
                pred = model.predict(X[:, val])
                accs[ic, ig, f] = float(np.mean(pred == labels[val]))
    mean = accs.mean(axis=2)
    best = np.unravel_index(np.argmax(mean), mean.shape)
    return float(c_grid[best[0]]), float(gamma_grid[best[1]]), accs


def classify_survey(dictionary, model: SvmModel, survey, stop: StopRule,
                    mask=None) -> ClassMap:
    """Sparse-code every pixel of a survey and predict its class.

    The model must have been trained on codes from the same dictionary
    (checked through the stored config hash).  With a row ``mask`` the same
    row subset is applied to both the profiles and the dictionary; the masked
    atoms are renormalized for pursuit and the coefficients rescaled back so
    they stay comparable to full-resolution codes.
    """
    if model.dict_config_hash is None:
        raise ModelMismatchError("dictionary/model mismatch: model not bound")
    if dictionary.config_hash != model.dict_config_hash:
        raise ModelMismatchError("dictionary/model mismatch")
    profiles = survey.profiles
    atoms = dictionary.atoms
    if mask is not None:
        mask = np.asarray(mask, dtype=np.intp)
        profiles = profiles[mask]
        atoms = atoms[mask]
        norms = np.linalg.norm(atoms, axis=0)
        if np.any(norms <= 1e-12):
            raise ValueError("an atom vanished under the row mask")
        codes = batch_omp(profiles, atoms / norms, stop) / norms[:, None]
    else:
        codes = batch_omp(profiles, atoms, stop)
    return ClassMap(labels=model.predict(codes), geometry=survey.geometry)


def confusion_matrix(predicted, truth, classes=None,
                     class_names=None) -> ConfusionMatrix:
    """Column-normalized confusion counts; columns are the ground truth.

    A class with no ground-truth pixels keeps a zero column and is listed in
    ``missing_classes``.
    """
    pred = predicted.labels if isinstance(predicted, ClassMap) else np.asarray(predicted)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth shapes differ")
    if classes is None:
        classes = np.unique(np.concatenate([pred, truth]))
    classes = np.asarray(classes)
    index = {c: i for i, c in enumerate(classes.tolist())}
    counts = np.zeros((classes.size, classes.size), dtype=np.int64)
    for p, t in zip(pred, truth):
        counts[index[p], index[t]] += 1
    col = counts.sum(axis=0)
    missing = [classes[i] for i in range(classes.size) if col[i] == 0]
    probs = counts / np.where(col == 0, 1, col)
    return ConfusionMatrix(
        probabilities=probs, counts=counts, classes=classes,
        class_names=tuple(class_names) if class_names else None,
        missing_classes=missing,
    )


def pcc(class_map, halos, truth, clutter_class: int = 0) -> dict[int, float]:
    """Per-class probability of correct classification over target halos.

    For each target class, the fraction of pixels inside that class's halos
    declared as the class; for clutter, the fraction of pixels outside all
    halos declared clutter.
    """
    pred = class_map.labels if isinstance(class_map, ClassMap) else np.asarray(class_map)
    truth = np.asarray(truth)
    if not halos:
        raise ValueError("empty halo list")
    by_class: dict[int, list] = {}
    all_halo = np.zeros(pred.size, dtype=bool)
    for class_id, pixels in halos:
        pixels = np.asarray(pixels, dtype=np.intp)
        if pixels.size == 0:
            raise ValueError(f"empty halo for class {class_id}")
        by_class.setdefault(int(class_id), []).append(pixels)
        all_halo[pixels] = True
    result: dict[int, float] = {}
    for class_id, pixel_sets in sorted(by_class.items()):
        inside = np.unique(np.concatenate(pixel_sets))
        result[class_id] = float(np.mean(pred[inside] == class_id))
    outside = ~all_halo
    if not outside.any():
        raise ValueError("no pixels outside the halos")
    result[clutter_class] = float(np.mean(pred[outside] == clutter_class))
    return result


def export_class_map_pgm(class_map: ClassMap, path, n_classes: int) -> None:
    """Write the map as an ASCII PGM image, class ids spread over 0..255."""
    grid = class_map.grid()
    scale = 255 // max(n_classes - 1, 1)
    with open(path, "w") as fh:
        fh.write("P2\n")
        fh.write(f"{grid.shape[1]} {grid.shape[0]}\n255\n")
        for row in grid:
            fh.write(" ".join(str(int(v) * scale) for v in row))
            fh.write("\n")


def export_class_map_csv(class_map: ClassMap, path) -> None:
    """Write the map as a CSV grid of class ids (one row per y line)."""
    grid = class_map.grid()
    with open(path, "w") as fh:
        for row in grid:
            fh.write(",".join(str(int(v)) for v in row))
            fh.write("\n")


def export_confusion_csv(cm: ConfusionMatrix, path) -> None:
    """Write the column-normalized confusion matrix with a class-name header."""
    names = (
        list(cm.class_names)
        if cm.class_names is not None
        else [str(c) for c in cm.classes.tolist()]
    )
    with open(path, "w") as fh:
        fh.write("predicted\\truth," + ",".join(names) + "\n")
        for i, name in enumerate(names):
            row = ",".join(format(v, ".6f") for v in cm.probabilities[i])
            fh.write(f"{name},{row}\n")
