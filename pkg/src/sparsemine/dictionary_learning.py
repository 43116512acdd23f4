"""Four dictionary learners sharing one contract.

``ksvd`` is the batch baseline (alternating pursuit and rank-1 atom updates).
``odl`` consumes one training column at a time, accumulating sufficient
statistics and refreshing atoms by block coordinate descent.  ``cbwlsu``
walks the training stream and refits, for each new element, the atoms shared
with the previously seen correlated elements via weighted least squares.
``dominodl`` extends that idea with mini-batches of new and previous
elements, exclusion of elements reused in consecutive iterations, and a
drop-off rule that discards training elements left unused for too long.

Every learner consumes a signal matrix (columns are signals) and returns a
unit-column dictionary, the sparse codes of the training set, and a run
report with wall time and bookkeeping counters.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataio import config_hash
from .sparse_coding import StopRule, batch_omp, entropy_threshold, lasso_cd

_UNUSED_EPS = 1e-10


class DegenerateTrainingError(ValueError):
    """Raised when the training matrix cannot seed a dictionary."""


@dataclass
class Dictionary:
    """Learned dictionary: unit-norm atom columns plus run metadata."""

    atoms: np.ndarray
    config_hash: int | None = None
    seed: int | None = None

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        if self.atoms.ndim != 2:
            raise ValueError("atoms must be a 2-D matrix")
        if not np.isfinite(self.atoms).all():
            raise ValueError("atoms contain NaN or Inf")
        norms = np.linalg.norm(self.atoms, axis=0)
        if self.atoms.shape[1] and np.abs(norms - 1.0).max() > 1e-10:
            raise ValueError("atom columns must have unit norm")

    @property
    def n_features(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]


@dataclass
class TrainConfig:
    """Shared learner parameters.

    ``delta`` may be a relative residual in [0, 1), the string ``"entropy"``
    (derive the residual level from the training data), or ``None``; at least
    one of ``k_s``/``delta`` must be active so pursuit can stop.  ``chi``
    defaults to a scale-free level derived from the training energy.
    """

    k: int
    n_t: int = 50
    k_s: int | None = 8
    delta: float | str | None = None
    n_b: int = 30
    n_r: int = 10
    n_u: int = 10
    chi: float | None = None
    lam: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.n_t < 1:
            raise ValueError("n_t must be at least 1")
        if min(self.n_b, self.n_r, self.n_u) < 1:
            raise ValueError("n_b, n_r and n_u must be at least 1")
        if self.chi is not None and self.chi <= 0:
            raise ValueError("chi must be positive")
        if self.k_s is None and self.delta is None:
            raise ValueError("set k_s, delta or both")
        if self.k_s is not None and self.k_s < 1:
            raise ValueError("k_s must be at least 1")
        if isinstance(self.delta, str) and self.delta != "entropy":
            raise ValueError("delta must be a float, None or 'entropy'")
        if isinstance(self.delta, float) and not 0 <= self.delta < 1:
            raise ValueError("numeric delta must lie in [0, 1)")

    def canonical(self) -> dict:
        return {
            "k": self.k, "n_t": self.n_t, "k_s": self.k_s, "delta": self.delta,
            "n_b": self.n_b, "n_r": self.n_r, "n_u": self.n_u,
            "chi": self.chi, "lam": self.lam, "seed": self.seed,
        }

    def hash(self) -> int:
        return config_hash(self.canonical())

    def resolve_delta(self, Y) -> float | None:
        if self.delta == "entropy":
            return entropy_threshold(Y)
        return self.delta

    def stop_rule(self, Y) -> StopRule:
        return StopRule(max_nonzeros=self.k_s, max_residual=self.resolve_delta(Y))


@dataclass
class LearnReport:
    """Run bookkeeping: timing, iterations, final error and counters."""

    wall_time: float
    iterations: int
    final_error: float
    atoms_replaced: int = 0
    elements_dropped: int = 0
    converged: bool = True
    trace: list = field(default_factory=list)


def init_dictionary(Y, k: int, seed) -> np.ndarray:
    """Seed a dictionary from ``k`` distinct training columns, normalized.

    Zero columns are rejected; drawing fewer than ``k`` usable columns is an
    error.  ``seed`` may be an integer or a ``numpy.random.Generator``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    norms = np.linalg.norm(Y, axis=0)
    usable = np.flatnonzero(norms > 1e-12)
    if k > Y.shape[1]:
        raise DegenerateTrainingError("not enough training columns")
    if usable.size < k:
        raise DegenerateTrainingError(
            f"only {usable.size} nonzero training columns for {k} atoms"
        )
    chosen = rng.choice(usable, size=k, replace=False)
    return Y[:, chosen] / norms[chosen]


def _normalize_columns(D, fallback=None):
    norms = np.linalg.norm(D, axis=0)
    bad = norms <= 1e-12
    if bad.any():
        if fallback is None:
            raise ValueError("cannot normalize a zero atom")
        D = D.copy()
        D[:, bad] = fallback[:, bad]
        norms = np.where(bad, 1.0, norms)
    return D / norms


def weighted_ls_update(Y, X, weights=None, D=None, eps_scale: float = 1e-8,
                       weight_cap: float = 1e12) -> np.ndarray:
    """Refit a block of atoms by weighted least squares.

    Solves ``min_D ||(Y - D X) W^(1/2)||_F`` where ``W`` weights each signal
    by the inverse squared norm of its current representation error (capped
    so perfectly fitted signals dominate without producing Inf).  ``X`` holds
    the coefficient rows of the atoms being refit; the Gram matrix is
    regularized by ``eps_scale * trace / n_atoms`` because mini-batch
    coefficient blocks are frequently rank deficient.  Columns are *not*
    normalized here; the caller decides.
    """
    Y = np.asarray(Y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or Y.shape[1] != X.shape[1]:
        raise ValueError("Y and X must be matrices over the same signals")
    if not np.any(X):
        raise ValueError("zero coefficient matrix")
    if weights is None:
        if D is None:
            raise ValueError("either weights or the current atoms D are required")
        D = np.asarray(D, dtype=np.float64)
        err = Y - D @ X
        weights = representation_weights(err, cap=weight_cap)
    w = np.minimum(np.asarray(weights, dtype=np.float64), weight_cap)
    Xw = X * w
    G = Xw @ X.T
    rhs = Xw @ Y.T
    s = X.shape[0]
    eps = eps_scale * np.trace(G) / s if eps_scale > 0 else 0.0
    A = G + eps * np.eye(s)
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        sol, _, _, _ = np.linalg.lstsq(A, rhs, rcond=None)
    return sol.T


def representation_weights(errors, cap: float = 1e12,
                           spread: float = 0.1) -> np.ndarray:
    """Inverse squared-error weights per signal, with a bounded spread.

    Error energies are smoothed by ``spread`` times the largest energy in the
    group before inversion, which keeps the weight ratio within ~1/spread:
    with raw inverse errors a few perfectly fitted signals seize the whole
    mini-batch fit on clean data and the update collapses.  The absolute
    ``cap`` keeps all-zero error groups finite (they weight uniformly).
    """
    e2 = np.einsum("ij,ij->j", errors, errors)
    smooth = e2 + spread * e2.max() if e2.size else e2
    with np.errstate(divide="ignore"):
        w = np.where(smooth > 0, 1.0 / np.maximum(smooth, 1e-300), cap)
    return np.minimum(w, cap)


def prune_atoms(D, X, Y, min_usage: int = 1,
                max_coherence: float = 0.999) -> tuple[np.ndarray, list[int]]:
    """Replace under-used or duplicated atoms with hard training columns.

    An atom used by fewer than ``min_usage`` signals, or nearly collinear
    with an earlier atom, is swapped for the normalized training column with
    the largest current residual.  Returns the new dictionary and the indices
    that were replaced.
    """
    D = np.asarray(D, dtype=np.float64).copy()
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    usage = np.count_nonzero(X, axis=1)
    resid = np.linalg.norm(Y - D @ X, axis=0)
    order = np.argsort(-resid)
    col_norms = np.linalg.norm(Y, axis=0)
    replaced: list[int] = []
    take = 0
    for k in range(D.shape[1]):
        coherent = k > 0 and np.abs(D[:, :k].T @ D[:, k]).max() > max_coherence
        if usage[k] >= min_usage and not coherent:
            continue
        while take < order.size and col_norms[order[take]] <= 1e-12:
            take += 1
        if take >= order.size:
            break
        c = order[take]
        take += 1
        D[:, k] = Y[:, c] / col_norms[c]
        replaced.append(k)
    return D, replaced


def ksvd_dictionary_update(Y, D, X) -> tuple[np.ndarray, np.ndarray]:
    """One full pass of rank-1 atom updates for fixed sparsity patterns.

    Every atom (with its coefficient row, on the signals that use it) is
    replaced by the leading singular pair of the restricted residual, which
    cannot increase the representation error.  Unused atoms are left alone.
    """
    Y = np.asarray(Y, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64).copy()
    X = np.asarray(X, dtype=np.float64).copy()
    R = Y - D @ X
    for k in range(D.shape[1]):
        users = np.flatnonzero(X[k])
        if users.size == 0:
            continue
        E = R[:, users] + np.outer(D[:, k], X[k, users])
        U, s, Vt = np.linalg.svd(E, full_matrices=False)
        D[:, k] = U[:, 0]
        X[k, users] = s[0] * Vt[0]
        R[:, users] = E - np.outer(D[:, k], X[k, users])
    return D, X


def ksvd(Y, cfg: TrainConfig) -> tuple[Dictionary, np.ndarray, LearnReport]:
    """Batch learner: alternate batch pursuit and per-atom SVD updates."""
    Y = np.asarray(Y, dtype=np.float64)
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    D = init_dictionary(Y, cfg.k, rng)
    stop = cfg.stop_rule(Y)
    X = np.zeros((cfg.k, Y.shape[1]))
    replaced_total = 0
    for _ in range(cfg.n_t):
        X = batch_omp(Y, D, stop)
        D, X = ksvd_dictionary_update(Y, D, X)
        D, replaced = prune_atoms(D, X, Y)
        if replaced:
            X[replaced, :] = 0.0
            replaced_total += len(replaced)
    err = float(np.linalg.norm(Y - D @ X))
    report = LearnReport(
        wall_time=time.perf_counter() - t0,
        iterations=cfg.n_t,
        final_error=err,
        atoms_replaced=replaced_total,
    )
    return Dictionary(D, config_hash=cfg.hash(), seed=cfg.seed), X, report


def _odl_update_atoms(D, A, B, max_rounds: int = 10, tol: float = 1e-6) -> None:
    """Block refresh of all atoms with accumulated usage, in place.

    Every active atom takes the step d_j + (b_j - D a_j) / A_jj
    simultaneously, normalized back to the sphere; repeated until the
    largest atom movement falls under ``tol``.
    """
    diag = np.diag(A).copy()
    active = diag > _UNUSED_EPS
    if not active.any():
        return
    safe = np.where(active, diag, 1.0)
    resid = np.empty_like(B)
    for _ in range(max_rounds):
        np.matmul(D, A, out=resid)
        np.subtract(B, resid, out=resid)
        resid /= safe
        step = D[:, active] + resid[:, active]
        norms = np.linalg.norm(step, axis=0)
        ok = norms > 1e-12
        step[:, ok] /= norms[ok]
        step[:, ~ok] = D[:, active][:, ~ok]
        max_change = float(np.linalg.norm(step - D[:, active], axis=0).max())
        D[:, active] = step
        if max_change < tol:
            break


def odl(Y, cfg: TrainConfig) -> tuple[Dictionary, np.ndarray, LearnReport]:
    """Online learner: per-signal l1 coding plus running-statistics updates.

    Each pass visits the training columns in a fresh random order; after each
    column the sufficient statistics ``A += x x'`` and ``B += y x'`` drive a
    block coordinate refresh of the used atoms.  Atoms that never accumulate
    usage are pruned at the end of each pass.  Final codes are recomputed
    with batch pursuit so all learners feed the classifier identically.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if not np.any(Y):
        raise DegenerateTrainingError("degenerate training set")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    m, n = Y.shape
    D = init_dictionary(Y, cfg.k, rng)
    A = np.zeros((cfg.k, cfg.k))
    B = np.zeros((m, cfg.k))
    Xlast = np.zeros((cfg.k, n))
    replaced_total = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # sweep-capped columns are tolerable here
        for _ in range(cfg.n_t):
            for i in rng.permutation(n):
                x = lasso_cd(Y[:, i], D, cfg.lam).to_dense()
                A += np.outer(x, x)
                B += np.outer(Y[:, i], x)
                Xlast[:, i] = x
                _odl_update_atoms(D, A, B)
            D, replaced = prune_atoms(D, Xlast, Y)
            if replaced:
                replaced_total += len(replaced)
                Xlast[replaced, :] = 0.0
                A[replaced, :] = 0.0
                A[:, replaced] = 0.0
                B[:, replaced] = 0.0
    X = batch_omp(Y, D, cfg.stop_rule(Y))
    err = float(np.linalg.norm(Y - D @ X))
    report = LearnReport(
        wall_time=time.perf_counter() - t0,
        iterations=cfg.n_t,
        final_error=err,
        atoms_replaced=replaced_total,
    )
    return Dictionary(D, config_hash=cfg.hash(), seed=cfg.seed), X, report


def _refit_group(Y, X, S, D, group, anchor_col, stop, min_usage=3,
                 rounds=3) -> bool:
    """Weighted refit of the atoms a signal group can determine, in place.

    Alternates a weighted least-squares update of the selected atoms with a
    pursuit refresh of the group's codes until they stabilize (at most
    ``rounds`` times).  Only atoms used by at least ``min_usage`` group
    signals are refit (plus the current support of ``anchor_col`` when
    given), against the residual with the refit atoms' own contribution
    added back; refitting every touched atom from a small group is
    underdetermined and smears atoms together.  Returns True when at least
    one update was applied.
    """
    updated = False
    for _ in range(rounds):
        usage = np.count_nonzero(S[:, group], axis=1)
        anchor = (
            np.flatnonzero(S[:, anchor_col])
            if anchor_col is not None
            else np.empty(0, dtype=np.intp)
        )
        atoms = np.union1d(np.flatnonzero(usage >= min_usage), anchor)
        if atoms.size == 0 or atoms.size > group.size:
            atoms = anchor
            if atoms.size == 0:
                break
        err = Y[:, group] - D @ X[:, group]
        w = representation_weights(err)
        target = err + D[:, atoms] @ X[np.ix_(atoms, group)]
        if not np.any(X[np.ix_(atoms, group)]):
            break
        refit = weighted_ls_update(target, X[np.ix_(atoms, group)], weights=w)
        D[:, atoms] = _normalize_columns(refit, fallback=D[:, atoms])
        before = S[:, group].copy()
        X[:, group] = batch_omp(Y[:, group], D, stop)
        S[:, group] = X[:, group] != 0.0
        updated = True
        if np.array_equal(before, S[:, group]):
            break  # supports stabilized
    return updated


def cbwlsu(Y, cfg: TrainConfig) -> tuple[Dictionary, np.ndarray, LearnReport]:
    """Correlation-driven online learner.

    Walks the training stream once.  For each element, all previously seen
    elements whose sparse codes share at least one atom with it join a
    weighted least-squares refit of the shared atoms, after which the codes
    of the elements involved are refreshed.  No pruning is performed.  The
    returned codes are recomputed against the final atoms so every learner
    feeds the classifier identically.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if not np.any(Y):
        raise DegenerateTrainingError("degenerate training set")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    n = Y.shape[1]
    D = init_dictionary(Y, cfg.k, rng)
    stop = cfg.stop_rule(Y)
    X = batch_omp(Y, D, stop)
    S = (X != 0.0).astype(np.float64)
    for i in range(1, n):
        corr = S[:, :i].T @ S[:, i]
        prev = np.flatnonzero(corr > 0)
        if prev.size == 0:
            continue
        group = np.append(prev, i)
        _refit_group(Y, X, S, D, group, anchor_col=i, stop=stop)
    X = batch_omp(Y, D, stop)
    err = float(np.linalg.norm(Y - D @ X))
    report = LearnReport(
        wall_time=time.perf_counter() - t0,
        iterations=n,
        final_error=err,
    )
    return Dictionary(D, config_hash=cfg.hash(), seed=cfg.seed), X, report


def dominodl(Y, cfg: TrainConfig, record_trace: bool = False,
             refit_rounds: int = 3) -> tuple[Dictionary, np.ndarray, LearnReport]:
    """Drop-off mini-batch online learner.

    The stream is consumed ``n_b`` new elements at a time.  Each iteration
    samples ``n_r`` previously seen elements, keeps the ones whose codes
    share atoms with the new mini-batch (excluding any element used in the
    immediately preceding iteration), refits the atoms spanned by that group
    with weighted least squares, refreshes the group's codes, and finally
    drops every pool element left unused for ``n_u`` consecutive iterations.
    Stops when the weighted group error falls below ``chi`` or the stream is
    exhausted.  Columns of the training matrix are normalized up front, and
    the returned codes (for the normalized columns) are recomputed against
    the final atoms so every learner feeds the classifier identically.
    """
    Yraw = np.asarray(Y, dtype=np.float64)
    if not np.any(Yraw):
        raise DegenerateTrainingError("degenerate training set")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    n = Yraw.shape[1]
    col_norms = np.linalg.norm(Yraw, axis=0)
    Yn = Yraw / np.where(col_norms > 1e-12, col_norms, 1.0)
    chi = cfg.chi
    if chi is None:
        chi = 1e-3 * float(np.linalg.norm(Yn) ** 2) / n

    D = init_dictionary(Yn, cfg.k, rng)
    stop = cfg.stop_rule(Yn)
    X = batch_omp(Yn, D, stop)
    S = (X != 0.0).astype(np.float64)

    in_pool = np.zeros(n, dtype=bool)
    last_used = np.zeros(n, dtype=np.int64)
    prev_correlated = np.zeros(n, dtype=bool)
    dropped_total = 0
    weighted_err = float("inf")
    trace: list[dict] = []
    pos = 0
    t = 0
    converged = False
    while pos < n:
        t += 1
        batch = np.arange(pos, min(pos + cfg.n_b, n))
        X[:, batch] = batch_omp(Yn[:, batch], D, stop)
        S[:, batch] = X[:, batch] != 0.0
        batch_atoms = S[:, batch].any(axis=1)

        pool = np.flatnonzero(in_pool)
        if pool.size < 2 * cfg.n_r:
            sampled = pool
        else:
            sampled = rng.choice(pool, size=cfg.n_r, replace=False)
        if sampled.size:
            fresh = ~prev_correlated[sampled]
            hits = S[batch_atoms][:, sampled].any(axis=0)
            correlated = sampled[fresh & hits]
        else:
            correlated = sampled

        group = np.concatenate([correlated, batch])
        if np.any(X[:, group]):
            w_before = representation_weights(Yn[:, group] - D @ X[:, group])
            _refit_group(Yn, X, S, D, group, anchor_col=None, stop=stop,
                         rounds=refit_rounds)
            err_new = Yn[:, group] - D @ X[:, group]
            weighted_err = float(np.einsum("ij,ij->j", err_new, err_new) @ w_before)

        last_used[correlated] = t
        in_pool[batch] = True
        last_used[batch] = t
        stale = in_pool & (t - last_used >= cfg.n_u)
        n_dropped = int(stale.sum())
        if n_dropped:
            in_pool[stale] = False
            dropped_total += n_dropped
        prev_correlated[:] = False
        prev_correlated[correlated] = True
        if record_trace:
            trace.append({
                "iteration": t,
                "new": batch.copy(),
                "sampled": np.sort(sampled),
                "correlated": np.sort(correlated),
                "dropped": n_dropped,
                "pool_size": n - dropped_total,
                "weighted_error": weighted_err,
            })
        pos += batch.size
        if weighted_err < chi:
            converged = True
            break

    X = batch_omp(Yn, D, stop)
    report = LearnReport(
        wall_time=time.perf_counter() - t0,
        iterations=t,
        final_error=weighted_err,
        elements_dropped=dropped_total,
        converged=converged,
        trace=trace,
    )
    return Dictionary(D, config_hash=cfg.hash(), seed=cfg.seed), X, report


LEARNERS = {
    "ksvd": ksvd,
    "odl": odl,
    "cbwlsu": cbwlsu,
    "dominodl": dominodl,
}
