"""Label-free summaries of a sample stream.

Every function here depends on the sampled partitions only through
quantities that do not change when component labels are permuted within a
sample: the value of k, pairwise co-membership, and class-by-response count
tables.  Estimates are dwell-weighted, so samples from the continuous-time
kernel are handled the same way as unit-weight samples.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KPosterior",
    "ConsensusMatrix",
    "TauEstimate",
    "ConvergenceError",
    "k_posterior",
    "consensus",
    "integrated_autocorrelation",
    "mutual_information",
    "spectral_consensus",
]


class ConvergenceError(RuntimeError):
    """Power iteration did not reach its tolerance."""


def _weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != n:
        raise ValueError(f"expected {n} weights, got {w.shape[0]}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    return w


def _unpack(samples):
    """(k, z, dwell) from a run result, a sequence of sample records, or arrays.

    A 1-d array is read as k values, a 2-d array as one assignment per row.
    """
    if hasattr(samples, "assignments"):
        return np.asarray(samples.k), samples.assignments, np.asarray(samples.dwell)
    if not isinstance(samples, np.ndarray):
        recs = list(samples)
        if recs and all(hasattr(r, "dwell") for r in recs):
            k = np.array([r.k for r in recs], dtype=np.int64)
            d = np.array([r.dwell for r in recs], dtype=np.float64)
            z = None
            if all(r.assignment is not None for r in recs):
                z = np.stack([np.asarray(r.assignment) for r in recs])
            return k, z, d
        samples = np.asarray(recs)
    if samples.ndim == 2:
        k = np.array([len(np.unique(row)) for row in samples], dtype=np.int64)
        return k, samples, None
    return samples.astype(np.int64), None, None


# -- posterior over k -----------------------------------------------------------


@dataclass(frozen=True)
class KPosterior:
    """Dwell-weighted histogram of the sampled k."""

    k: np.ndarray
    weight: np.ndarray
    probability: np.ndarray
    map_k: int

    def prob(self, k: int) -> float:
        hit = np.nonzero(self.k == k)[0]
        return float(self.probability[hit[0]]) if hit.size else 0.0

    def mean(self) -> float:
        return float(np.dot(self.k, self.probability))

    def rows(self) -> list[tuple[int, float]]:
        return [(int(k), float(p)) for k, p in zip(self.k, self.probability)]


def k_posterior(samples, weights=None) -> KPosterior:
    """Posterior over the number of components.

    ``samples`` is a run result, a sequence of sample records, or a plain
    sequence of k values (with optional ``weights``).  MAP ties go to the
    smallest k.
    """
    ks, _, dwell = _unpack(samples)
    if weights is None:
        weights = dwell
    ks = np.asarray(ks, dtype=np.int64)
    if ks.size == 0:
        raise ValueError("no samples")
    if np.any(ks < 1):
        raise ValueError("k must be >= 1")
    w = _weights(len(ks), weights)
    total = w.sum()
    if not total > 0:
        raise ValueError("total sample weight is zero")
    support = np.unique(ks)
    mass = np.array([w[ks == k].sum() for k in support])
    map_k = int(support[np.argmax(mass)])  # argmax returns the first, i.e. smallest, k
    return KPosterior(support, mass, mass / total, map_k)


# -- consensus ------------------------------------------------------------------


@dataclass(frozen=True)
class ConsensusMatrix:
    """Pairwise co-membership frequencies."""

    matrix: np.ndarray
    total_weight: float

    @property
    def n_obs(self) -> int:
        return self.matrix.shape[0]


def _coincidence_counts(z: np.ndarray, w: np.ndarray, integer: bool) -> np.ndarray:
    n_obs = z.shape[1]
    acc = np.zeros((n_obs, n_obs), dtype=np.int64 if integer else np.float64)
    for row, wt in zip(z, w):
        _, codes = np.unique(row, return_inverse=True)
        onehot = np.zeros((n_obs, codes.max() + 1), dtype=acc.dtype)
        onehot[np.arange(n_obs), codes] = 1
        same = onehot @ onehot.T
        if integer:
            acc += same
        else:
            acc += wt * same
    return acc


def consensus(samples, weights=None) -> ConsensusMatrix:
    """Dwell-weighted fraction of samples in which observations i and j share
    a component.

    Accepts a run result (its streaming accumulator is used when present,
    otherwise its assignment snapshots) or an S x N array of labels.  With
    unit weights the accumulator is an integer count, so the result does
    not depend on how labels are permuted within each sample.
    """
    coincidence = getattr(samples, "coincidence", None)
    if coincidence is not None:
        total = float(np.sum(samples.dwell))
        m = coincidence / total
        np.fill_diagonal(m, 1.0)
        return ConsensusMatrix(np.clip(0.5 * (m + m.T), 0.0, 1.0), total)
    _, z, dwell = _unpack(samples)
    if z is None:
        raise ValueError("run was recorded without assignments or coincidence counts")
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("need at least one assignment snapshot")
    if weights is None:
        weights = dwell
    w = _weights(z.shape[0], weights)
    integer = bool(np.all(w == 1.0))
    acc = _coincidence_counts(z, w, integer)
    total = float(w.sum())
    if not total > 0:
        raise ValueError("total sample weight is zero")
    m = acc / total
    np.fill_diagonal(m, 1.0)
    return ConsensusMatrix(m, total)


# -- integrated autocorrelation time ----------------------------------------------


@dataclass(frozen=True)
class TauEstimate:
    """Integrated autocorrelation time in units of the series spacing."""

    tau: float
    window: int
    n: int
    constant: bool = False
    short: bool = False

    def __float__(self) -> float:
        return self.tau


def _autocorr(x: np.ndarray) -> np.ndarray:
    n = len(x)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), n=size)
    acf = np.fft.irfft(f * np.conj(f), n=size)[:n]
    return acf / acf[0]


def integrated_autocorrelation(series, c: float = 5.0) -> TauEstimate:
    """tau = 1 + 2 sum_{t=1}^{W} rho(t) with the self-consistent window
    W = min{t : t >= c tau(t)}.

    A constant series has no defined tau; it is reported as 1 with
    ``constant=True``.  ``short=True`` (and a warning) when the series is
    shorter than 100 tau.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    n = len(x)
    if n < 2:
        raise ValueError("need at least two points")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if np.ptp(x) == 0.0:
        return TauEstimate(1.0, 0, n, constant=True)
    rho = _autocorr(x)
    taus = 2.0 * np.cumsum(rho) - 1.0  # taus[t] = 1 + 2 sum_{s=1}^{t} rho(s)
    ok = np.arange(n) >= c * taus
    window = int(np.argmax(ok)) if ok.any() else n - 1
    tau = float(taus[window])
    short = n < 100 * tau
    if short:
        warnings.warn(f"series of length {n} is shorter than 100 tau (tau ~ {tau:.3g})",
                      RuntimeWarning, stacklevel=2)
    return TauEstimate(tau, window, n, short=short)


# -- mutual information ---------------------------------------------------------


def _mi_one(z: np.ndarray, x: np.ndarray, cards) -> np.ndarray:
    n_obs = len(z)
    _, cls = np.unique(z, return_inverse=True)
    k = cls.max() + 1
    out = np.zeros(x.shape[1])
    n_r = np.bincount(cls, minlength=k).astype(np.float64)
    for q in range(x.shape[1]):
        kq = cards[q]
        m = np.zeros((k, kq))
        np.add.at(m, (cls, x[:, q]), 1.0)
        n_x = m.sum(axis=0)
        nz = m > 0
        ratio = n_obs * m[nz] / np.outer(n_r, n_x)[nz]
        out[q] = np.sum(m[nz] * np.log(ratio)) / n_obs
    return out / math.log(2.0)


def mutual_information(samples, data, weights=None, cardinalities=None) -> np.ndarray:
    """Per-question mutual information (bits) between class and response.

    For one assignment, I_q = (1/N) sum_{r,x} m_rqx log2(N m_rqx / (n_r n_qx));
    the result is the dwell-weighted average over samples.
    """
    _, z, dwell = _unpack(samples)
    if z is None:
        raise ValueError("mutual information needs assignment snapshots")
    z = np.atleast_2d(np.asarray(z))
    x = np.asarray(getattr(data, "values", data), dtype=np.int64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != z.shape[1]:
        raise ValueError("assignments and data disagree on N")
    if cardinalities is None:
        cardinalities = getattr(data, "cardinalities", None) or tuple(x.max(axis=0) + 1)
    if weights is None:
        weights = dwell
    w = _weights(z.shape[0], weights)
    acc = np.zeros(x.shape[1])
    for row, wt in zip(z, w):
        if wt > 0:
            acc += wt * _mi_one(row, x, cardinalities)
    return np.maximum(acc / w.sum(), 0.0)


# -- spectral consensus clustering ------------------------------------------------


def _leading_eigenvectors(c: np.ndarray, n_vec: int, rng, tol: float, max_iter: int):
    n = c.shape[0]
    vecs = np.zeros((n, n_vec))
    vals = np.zeros(n_vec)
    for j in range(n_vec):
        v = rng.standard_normal(n)
        prev = vecs[:, :j]
        for it in range(max_iter):
            v -= prev @ (prev.T @ v)
            nrm = np.linalg.norm(v)
            if nrm == 0.0:
                v = rng.standard_normal(n)
                continue
            v /= nrm
            cv = c @ v
            cv -= prev @ (prev.T @ cv)
            lam = float(v @ cv)
            resid = np.linalg.norm(cv - lam * v)
            if resid <= tol * max(abs(lam), 1.0):
                break
            v = cv
        else:
            raise ConvergenceError(
                f"eigenvector {j + 1} not converged after {max_iter} iterations "
                f"(residual {resid:.3g}, eigenvalue estimate {lam:.6g})"
            )
        vecs[:, j] = v
        vals[j] = lam
    return vals, vecs


def spectral_consensus(c, k: int, seed: int = 0, n_vectors: int = 2, tol: float = 1e-8,
                       max_iter: int = 10000, n_init: int = 50) -> np.ndarray:
    """Group observations by k-means on the leading eigenvectors of a
    consensus matrix.  Returns 1-based labels numbered by first appearance.
    """
    from sklearn.cluster import KMeans

    m = np.asarray(getattr(c, "matrix", c), dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("consensus matrix must be square")
    n = m.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1 or n == 1:
        return np.ones(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    n_vec = min(n_vectors, n)
    _, vecs = _leading_eigenvectors(0.5 * (m + m.T), n_vec, rng, tol, max_iter)
    km = KMeans(n_clusters=min(k, n), init="k-means++", n_init=n_init, algorithm="lloyd",
                random_state=seed)
    with warnings.catch_warnings():
        # fewer distinct points than clusters is legitimate for exact block matrices
        warnings.simplefilter("ignore")
        raw = km.fit_predict(vecs)
    _, first, inv = np.unique(raw, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(1, len(first) + 1)
    return rank[inv]
