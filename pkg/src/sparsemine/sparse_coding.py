"""Sparse decomposition of signals over a unit-norm dictionary.

Greedy orthogonal matching pursuit is provided in two forms: a plain
single-signal loop and a Gram-precomputed batch version that processes all
columns of a signal matrix together and is guaranteed to match the per-column
results.  An entropy-derived residual threshold supplies a data-driven
stopping level, and a cyclic coordinate-descent solver handles the
l1-regularized least-squares subproblem used by the online learner.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np


class DegenerateSupportError(ValueError):
    """Raised when the selected atoms become numerically rank deficient."""


class ConvergenceWarning(UserWarning):
    """Issued when an iterative solver stops at its iteration cap."""


class CodingWarning(UserWarning):
    """Issued when individual columns of a batch fail to code."""


@dataclass(frozen=True)
class StopRule:
    """Stopping criteria for pursuit: sparsity cap and/or residual level.

    ``max_residual`` is relative: pursuit stops once the residual l2 norm
    drops below ``max_residual * ||y||``.
    """

    max_nonzeros: int | None = None
    max_residual: float | None = None

    def __post_init__(self):
        if self.max_nonzeros is None and self.max_residual is None:
            raise ValueError("at least one stopping criterion must be set")
        if self.max_nonzeros is not None and self.max_nonzeros < 1:
            raise ValueError("max_nonzeros must be at least 1")
        if self.max_residual is not None and not 0 <= self.max_residual < 1:
            raise ValueError("max_residual must lie in [0, 1)")


@dataclass
class SparseVector:
    """Sparse coefficients: strictly increasing indices, matching values."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.intp)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.indices.shape != self.values.shape:
            raise ValueError("indices and values must have equal length")
        if self.indices.size and (
            np.any(np.diff(self.indices) <= 0)
            or self.indices[0] < 0
            or self.indices[-1] >= self.dim
        ):
            raise ValueError("indices must be strictly increasing and within dim")

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        x = np.zeros(self.dim)
        x[self.indices] = self.values
        return x

    @classmethod
    def from_dense(cls, x) -> "SparseVector":
        x = np.asarray(x, dtype=np.float64)
        idx = np.flatnonzero(x)
        return cls(indices=idx, values=x[idx], dim=x.size)


def _make_sparse(support, values, dim) -> SparseVector:
    support = np.asarray(support, dtype=np.intp)
    values = np.asarray(values, dtype=np.float64)
    keep = values != 0.0
    support, values = support[keep], values[keep]
    order = np.argsort(support)
    return SparseVector(indices=support[order], values=values[order], dim=dim)


def _ls_fit(D, support, y) -> np.ndarray:
    """Least-squares coefficients on a support; rejects rank-deficient sets."""
    coef, _, rank, _ = np.linalg.lstsq(D[:, list(support)], y, rcond=None)
    if rank < len(support):
        raise DegenerateSupportError("degenerate support")
    return coef


def omp(y, D, stop: StopRule) -> SparseVector:
    """Orthogonal matching pursuit for one signal.

    Greedily selects the atom with the largest absolute correlation to the
    current residual (ties break to the lowest index), refits the active set
    by least squares each step, and stops when either rule in ``stop`` fires.
    """
    y = np.asarray(y, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    m, k = D.shape
    if y.shape != (m,):
        raise ValueError(f"signal length {y.shape} does not match dictionary rows {m}")
    ynorm = float(np.linalg.norm(y))
    if ynorm == 0.0:
        return SparseVector(np.empty(0, dtype=np.intp), np.empty(0), k)

    target = stop.max_residual * ynorm if stop.max_residual is not None else None
    max_atoms = min(m, k, stop.max_nonzeros if stop.max_nonzeros is not None else m)

    support: list[int] = []
    coef = np.empty(0)
    r = y
    for _ in range(max_atoms):
        rnorm = float(np.linalg.norm(r))
        if target is not None and rnorm <= target:
            break
        if rnorm <= 1e-13 * ynorm:
            break
        c = D.T @ r
        if support:
            c[support] = 0.0
        j = int(np.argmax(np.abs(c)))
        if c[j] == 0.0:
            break
        support.append(j)
        coef = _ls_fit(D, support, y)
        r = y - D[:, support] @ coef
    return _make_sparse(support, coef, k)


def batch_omp(Y, D, stop: StopRule) -> np.ndarray:
    """Pursuit over every column of ``Y`` at once; returns dense (K, L) codes.

    Precomputes the Gram matrix D'D and the correlations D'Y, then runs all
    columns in lockstep with batched least-squares solves on the growing
    supports.  Columns whose active set turns degenerate are zeroed and
    reported through a :class:`CodingWarning` instead of aborting the batch;
    results for healthy columns equal the single-signal :func:`omp` output.
    """
    Y = np.asarray(Y, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    m, k = D.shape
    n = Y.shape[1]
    if Y.shape[0] != m:
        raise ValueError("signal rows do not match dictionary rows")

    max_atoms = min(m, k, stop.max_nonzeros if stop.max_nonzeros is not None else m)
    G = D.T @ D
    A0 = D.T @ Y
    ynorm2 = np.einsum("ij,ij->j", Y, Y)
    target2 = (
        (stop.max_residual**2) * ynorm2 if stop.max_residual is not None else None
    )

    act = np.full((n, max_atoms), -1, dtype=np.intp)
    xcur = np.zeros((n, max_atoms))
    nact = np.zeros(n, dtype=np.intp)
    rnorm2 = ynorm2.copy()
    alpha = A0.copy()
    live = ynorm2 > 0.0
    failed = np.zeros(n, dtype=bool)

    for step in range(max_atoms):
        cols = np.flatnonzero(live)
        if cols.size == 0:
            break
        a = np.abs(alpha[:, cols])
        if step > 0:
            a[act[cols, :step].T, np.arange(cols.size)] = 0.0
        picks = np.argmax(a, axis=0)
        amax = a[picks, np.arange(cols.size)]
        # Residual orthogonal to every remaining atom: that column is done.
        exhausted = amax == 0.0
        if exhausted.any():
            live[cols[exhausted]] = False
            cols = cols[~exhausted]
            picks = picks[~exhausted]
            if cols.size == 0:
                continue
        act[cols, step] = picks
        nact[cols] = step + 1
        s = step + 1
        sub = act[cols, :s]
        Gs = G[sub[:, :, None], sub[:, None, :]]
        b = A0[sub, cols[:, None]]
        try:
            x = np.linalg.solve(Gs, b[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            x = np.zeros((cols.size, s))
            for i in range(cols.size):
                try:
                    x[i] = np.linalg.solve(Gs[i], b[i])
                except np.linalg.LinAlgError:
                    failed[cols[i]] = True
        rnew = ynorm2[cols] - np.einsum("ij,ij->i", b, x)
        # Residual must not grow; growth marks a numerically degenerate set.
        bad = failed[cols] | (rnew > rnorm2[cols] + 1e-9 * (1.0 + ynorm2[cols]))
        if bad.any():
            failed[cols[bad]] = True
            live[cols[bad]] = False
            nact[cols[bad]] = 0
        good = ~bad
        gcols = cols[good]
        xcur[gcols, :s] = x[good]
        rnorm2[gcols] = np.maximum(rnew[good], 0.0)
        alpha[:, gcols] = A0[:, gcols] - np.einsum(
            "ijk,jk->ij", G[:, sub[good]], x[good]
        )
        if target2 is not None:
            live[gcols] &= rnorm2[gcols] > target2[gcols]
        live[gcols] &= rnorm2[gcols] > 1e-26 * ynorm2[gcols]

    if failed.any():
        warnings.warn(
            f"{int(failed.sum())} column(s) failed to code and were zeroed",
            CodingWarning,
        )
    codes = np.zeros((k, n))
    valid = np.arange(max_atoms)[None, :] < nact[:, None]
    codes[act[valid], np.nonzero(valid)[0]] = xcur[valid]
    return codes


def entropy_threshold(Y, n_bins: int | None = None) -> float:
    """Normalized entropy of the row-mean vector of ``Y``, in [0, 1].

    The row means are binned into an ``n_bins`` normalized histogram (default
    ceil(sqrt(M)) bins) and the histogram entropy is divided by log(n_bins).
    A constant mean vector occupies one bin and yields 0; a uniform spread
    yields 1.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    m = Y.shape[0]
    if Y.shape[1] < 1:
        raise ValueError("need at least one signal")
    if n_bins is None:
        n_bins = int(math.ceil(math.sqrt(m)))
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    mu = Y.mean(axis=1)
    counts, _ = np.histogram(mu, bins=n_bins, range=(mu.min(), mu.max()))
    p = counts[counts > 0] / m
    return float(-(p * np.log(p)).sum() / math.log(n_bins))


def lasso_cd(y, D, lam: float, tol: float = 1e-8,
             max_sweeps: int | None = None) -> SparseVector:
    """Cyclic coordinate descent for 0.5||y - Dx||^2 + lam*||x||_1.

    Backed by scikit-learn's coordinate-descent solver (soft-thresholding
    sweeps over the coordinates), which reaches the same minimizer of the
    convex objective as any other correct solver.  Stops after ``10 * K``
    sweeps at the latest; hitting the cap issues a
    :class:`ConvergenceWarning` and returns the current iterate.  ``lam = 0``
    falls back to the minimum-norm least-squares solution.
    """
    y = np.asarray(y, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    m, k = D.shape
    if y.shape != (m,):
        raise ValueError("signal length does not match dictionary rows")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if max_sweeps is None:
        max_sweeps = 10 * k
    if lam == 0.0:
        x, _, _, _ = np.linalg.lstsq(D, y, rcond=None)
        return SparseVector.from_dense(x)

    from sklearn.exceptions import ConvergenceWarning as SkConvergenceWarning
    from sklearn.linear_model import Lasso

    model = Lasso(alpha=lam / m, fit_intercept=False, tol=tol,
                  max_iter=max_sweeps)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SkConvergenceWarning)
        model.fit(D, y)
    if any(issubclass(w.category, SkConvergenceWarning) for w in caught):
        warnings.warn("coordinate descent hit its sweep cap", ConvergenceWarning)
    return SparseVector.from_dense(model.coef_)


def lasso_objective(y, D, x, lam: float) -> float:
    """Value of 0.5||y - Dx||^2 + lam*||x||_1."""
    r = np.asarray(y) - np.asarray(D) @ np.asarray(x)
    return 0.5 * float(r @ r) + lam * float(np.abs(x).sum())


def sparse_best_oracle(y, D, max_nonzeros: int, budget: int = 10**6) -> SparseVector:
    """Exhaustive best approximation over all supports of size <= max_nonzeros.

    Test oracle: least-squares fits every candidate support and returns the
    global residual minimizer.  Errors out if the combinatorial budget is
    exceeded.
    """
    y = np.asarray(y, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    m, k = D.shape
    max_nonzeros = min(max_nonzeros, k)
    total = sum(math.comb(k, s) for s in range(1, max_nonzeros + 1))
    if total > budget:
        raise ValueError(f"support enumeration needs {total} fits, budget is {budget}")
    best_r2 = float(y @ y)
    best_support: tuple[int, ...] = ()
    best_coef = np.empty(0)
    for size in range(1, max_nonzeros + 1):
        for support in itertools.combinations(range(k), size):
            sub = D[:, support]
            coef, _, _, _ = np.linalg.lstsq(sub, y, rcond=None)
            r = y - sub @ coef
            r2 = float(r @ r)
            if r2 < best_r2 - 1e-15 * (1.0 + best_r2):
                best_r2 = r2
                best_support = support
                best_coef = coef
    return _make_sparse(np.asarray(best_support, dtype=np.intp), best_coef, k)
