"""Integrable component likelihoods.

Each model exposes three layers that must agree with one another:

* ``log_marginal_likelihood`` evaluates log P(x | k, z) from scratch for a
  labelled assignment (numpy/scipy, used as the reference);
* :class:`ComponentStats` plus ``log_weight_existing`` / ``log_weight_new``
  give the per-move weight ratios for a single component;
* ``kernel_arrays`` packs the data, lookup tables and slot-indexed
  statistics consumed by the compiled sampler.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from scipy.special import gammaln

from .priors import PriorConfig, _log_norm_factor, log_k_prior

__all__ = [
    "ModelConfig",
    "NullModel",
    "GaussianModel",
    "PoissonModel",
    "CategoricalModel",
    "ComponentStats",
    "log_weight_existing",
    "log_weight_new",
    "add_obs",
    "remove_obs",
    "log_marginal_likelihood",
    "estimate_parameters",
    "model_from_name",
]

NULL, GAUSSIAN, POISSON, CATEGORICAL = 0, 1, 2, 3
LOG_2PI = math.log(2.0 * math.pi)

ModelArrays = namedtuple(
    "ModelArrays", "family fpar xf xi tab_a tab_b single card coff"
)
StatsArrays = namedtuple("StatsArrays", "fs cs")


@dataclass
class ComponentStats:
    """Sufficient statistics of one component.

    Gaussian uses ``mean``/``m2`` (sum of squared deviations), Poisson uses
    ``total`` (sum of counts), categorical uses ``counts`` laid out flat as
    question-major blocks of length k_q.
    """

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    total: int = 0
    counts: np.ndarray | None = None


@njit(cache=True)
def gauss_add(n, mean, m2, x):
    """Welford update for adding ``x`` to a component of size ``n``."""
    d = x - mean
    mean += d / (n + 1)
    m2 += d * (x - mean)
    return mean, m2


@njit(cache=True)
def gauss_remove(n, mean, m2, x):
    """Inverse of :func:`gauss_add`; ``n`` is the size before removal."""
    if n == 1:
        return 0.0, 0.0
    new_mean = (n * mean - x) / (n - 1)
    m2 -= (x - mean) * (x - new_mean)
    if m2 < 0.0:
        m2 = 0.0
    return new_mean, m2


class ModelConfig:
    """Base class; subclasses are frozen dataclasses."""

    family = NULL
    name = "null"

    def check_data(self, values) -> np.ndarray:
        return np.asarray(values)

    def resolve(self, values) -> "ModelConfig":
        """Fill data-dependent defaults."""
        return self

    def params(self) -> dict:
        return {}

    # -- single component ------------------------------------------------
    def empty_stats(self) -> ComponentStats:
        return ComponentStats()

    def stats_for(self, members, values) -> ComponentStats:
        st = self.empty_stats()
        for i in members:
            self.add_obs(st, values[i])
        return st

    def add_obs(self, st: ComponentStats, x) -> None:
        st.n += 1

    def remove_obs(self, st: ComponentStats, x) -> None:
        if st.n < 1:
            raise ValueError("removing from an empty component")
        st.n -= 1

    def log_weight_existing(self, st: ComponentStats, x) -> float:
        _require_nonempty(st)
        return 0.0

    def log_new_singleton(self, x) -> float:
        """log P(x_i | new component alone), data-only constants included."""
        return 0.0

    def log_marginal_likelihood(self, labels, values) -> float:
        return 0.0

    def estimate(self, st: ComponentStats) -> dict:
        return {}

    # -- compiled sampler -------------------------------------------------
    def kernel_arrays(self, values) -> ModelArrays:
        n = len(values)
        return ModelArrays(
            NULL, np.zeros(4), np.zeros(0), np.zeros((n, 0), np.int64),
            np.zeros(1), np.zeros(1), np.zeros(n), np.zeros(0, np.int64),
            np.zeros(1, np.int64),
        )

    def stats_arrays(self, n_obs: int) -> StatsArrays:
        return StatsArrays(np.zeros((n_obs, 2)), np.zeros((n_obs, 1), np.int64))


def _require_nonempty(st: ComponentStats) -> None:
    if st.n < 1:
        raise ValueError("weights are only defined for non-empty components")


@dataclass(frozen=True)
class NullModel(ModelConfig):
    """Constant likelihood; the sampler then draws from the prior."""

    family = NULL
    name = "null"


@dataclass(frozen=True)
class GaussianModel(ModelConfig):
    """Known-variance Gaussian components, uniform prior of width ``prior_width`` on each mean."""

    sigma2: float = 1.0
    prior_width: float | None = None

    family = GAUSSIAN
    name = "gaussian"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.prior_width is not None and not self.prior_width > 0:
            raise ValueError("prior width must be positive")

    @property
    def width(self) -> float:
        if self.prior_width is None:
            raise ValueError("prior width unresolved; call resolve(data) first")
        return self.prior_width

    def check_data(self, values) -> np.ndarray:
        x = np.asarray(values, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("gaussian model expects a single real column")
        if not np.all(np.isfinite(x)):
            raise ValueError("gaussian data contains NaN or infinite values")
        return x

    def resolve(self, values) -> "GaussianModel":
        if self.prior_width is not None:
            return self
        x = self.check_data(values)
        width = float(x.max() - x.min()) + 6.0 * math.sqrt(self.sigma2)
        return replace(self, prior_width=width)

    def params(self) -> dict:
        return {"sigma2": self.sigma2, "prior_width": self.prior_width}

    def add_obs(self, st, x):
        st.mean, st.m2 = gauss_add(st.n, st.mean, st.m2, float(x))
        st.n += 1

    def remove_obs(self, st, x):
        if st.n < 1:
            raise ValueError("removing from an empty component")
        st.mean, st.m2 = gauss_remove(st.n, st.mean, st.m2, float(x))
        st.n -= 1

    def log_weight_existing(self, st, x):
        _require_nonempty(st)
        f = st.n / (st.n + 1.0)
        d = float(x) - st.mean
        return 0.5 * math.log(f / (2.0 * math.pi * self.sigma2)) - f * d * d / (2.0 * self.sigma2)

    def log_new_singleton(self, x):
        return -math.log(self.width)

    def log_marginal_likelihood(self, labels, values):
        x = self.check_data(values)
        labels = np.asarray(labels)
        comps = np.unique(labels)
        k, n_obs = len(comps), len(x)
        out = -k * math.log(self.width) - 0.5 * (n_obs - k) * math.log(2 * math.pi * self.sigma2)
        for r in comps:
            xr = x[labels == r]
            ss = float(np.sum((xr - xr.mean()) ** 2))
            out += -0.5 * math.log(len(xr)) - ss / (2.0 * self.sigma2)
        return out

    def estimate(self, st):
        return {"mean": st.mean, "variance": self.sigma2 / st.n}

    def kernel_arrays(self, values):
        x = self.check_data(values)
        n_obs = len(x)
        n = np.arange(n_obs + 2, dtype=np.float64)
        tab_a = np.zeros(n_obs + 2)
        tab_a[1:] = 0.5 * np.log(n[1:] / (n[1:] + 1.0)) - 0.5 * math.log(2 * math.pi * self.sigma2)
        tab_b = n / ((n + 1.0) * 2.0 * self.sigma2)
        fpar = np.array([self.sigma2, math.log(self.width), 0.0, 0.0])
        return ModelArrays(
            GAUSSIAN, fpar, x, np.zeros((n_obs, 0), np.int64), tab_a, tab_b,
            np.full(n_obs, -math.log(self.width)), np.zeros(0, np.int64), np.zeros(1, np.int64),
        )


@dataclass(frozen=True)
class PoissonModel(ModelConfig):
    """Poisson components with a Gamma(shape, rate) prior on each mean."""

    gamma_shape: float = 1.0
    gamma_rate: float = 0.01

    family = POISSON
    name = "poisson"

    def __post_init__(self):
        if not (self.gamma_shape > 0 and self.gamma_rate > 0):
            raise ValueError("gamma shape and rate must be positive")

    def check_data(self, values) -> np.ndarray:
        x = np.asarray(values)
        if x.ndim != 1:
            raise ValueError("poisson model expects a single count column")
        if x.dtype.kind == "f":
            if not np.all(np.isfinite(x)) or np.any(x != np.round(x)):
                raise ValueError("poisson data must be integer counts")
        x = x.astype(np.int64)
        if np.any(x < 0):
            raise ValueError("poisson counts must be non-negative")
        return x

    def params(self) -> dict:
        return {"gamma_shape": self.gamma_shape, "gamma_rate": self.gamma_rate}

    def add_obs(self, st, x):
        st.total += int(x)
        st.n += 1

    def remove_obs(self, st, x):
        if st.n < 1 or st.total < int(x):
            raise ValueError("observation is not counted in this component")
        st.total -= int(x)
        st.n -= 1

    def log_weight_existing(self, st, x):
        _require_nonempty(st)
        a, b, X, x = self.gamma_shape, self.gamma_rate, st.total, int(x)
        return (
            math.lgamma(X + x + a) - math.lgamma(X + a)
            + (X + a) * math.log(st.n + b) - (X + x + a) * math.log(st.n + b + 1.0)
        )

    def log_new_singleton(self, x):
        a, b, x = self.gamma_shape, self.gamma_rate, int(x)
        return math.lgamma(x + a) - math.lgamma(a) + a * math.log(b) - (x + a) * math.log(b + 1.0)

    def log_marginal_likelihood(self, labels, values):
        x = self.check_data(values)
        labels = np.asarray(labels)
        a, b = self.gamma_shape, self.gamma_rate
        out = -float(np.sum(gammaln(x + 1.0)))
        for r in np.unique(labels):
            xr = x[labels == r]
            X, n = float(xr.sum()), len(xr)
            out += a * math.log(b) + math.lgamma(X + a) - math.lgamma(a) - (X + a) * math.log(n + b)
        return out

    def estimate(self, st):
        shape = st.total + self.gamma_shape
        rate = st.n + self.gamma_rate
        return {"shape": shape, "rate": rate, "mean": shape / rate, "variance": shape / rate**2}

    def kernel_arrays(self, values):
        x = self.check_data(values)
        n_obs = len(x)
        a, b = self.gamma_shape, self.gamma_rate
        total = int(x.sum())
        tab_a = gammaln(np.arange(total + 1, dtype=np.float64) + a)
        tab_b = np.log(np.arange(n_obs + 2, dtype=np.float64) + b)
        single = gammaln(x + a) - math.lgamma(a) + a * math.log(b) - (x + a) * math.log(b + 1.0)
        fpar = np.array([a, b, -float(np.sum(gammaln(x + 1.0))), 0.0])
        return ModelArrays(
            POISSON, fpar, np.zeros(0), x.reshape(-1, 1).copy(), tab_a, tab_b,
            single.astype(np.float64), np.zeros(0, np.int64), np.zeros(1, np.int64),
        )


@dataclass(frozen=True)
class CategoricalModel(ModelConfig):
    """Latent class model: independent categorical answers per question,
    symmetric Dirichlet(``eta``) prior on each class's response probabilities."""

    eta: float = 1.0
    cardinalities: tuple[int, ...] | None = None

    family = CATEGORICAL
    name = "categorical"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("theta concentration must be positive")
        if self.cardinalities is not None:
            object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))
            if any(c < 1 for c in self.cardinalities):
                raise ValueError("cardinalities must be positive")

    @property
    def cards(self) -> tuple[int, ...]:
        if self.cardinalities is None:
            raise ValueError("cardinalities unresolved; call resolve(data) first")
        return self.cardinalities

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.cards)]).astype(np.int64)

    def check_data(self, values) -> np.ndarray:
        x = np.asarray(values)
        if x.ndim != 2:
            raise ValueError("categorical model expects an N x Q table of codes")
        x = x.astype(np.int64)
        if np.any(x < 0):
            raise ValueError("categorical codes must be non-negative")
        if self.cardinalities is not None:
            if x.shape[1] != len(self.cardinalities):
                raise ValueError("number of questions does not match cardinalities")
            if np.any(x >= np.asarray(self.cardinalities)):
                raise ValueError("categorical code outside its question's cardinality")
        return x

    def resolve(self, values) -> "CategoricalModel":
        if self.cardinalities is not None:
            return self
        x = self.check_data(values)
        return replace(self, cardinalities=tuple(int(c) for c in x.max(axis=0) + 1))

    def params(self) -> dict:
        return {"theta_eta": self.eta, "cardinalities": list(self.cards)}

    def empty_stats(self):
        return ComponentStats(counts=np.zeros(int(sum(self.cards)), dtype=np.int64))

    def _cols(self, x) -> np.ndarray:
        return self.offsets[:-1] + np.asarray(x, dtype=np.int64)

    def add_obs(self, st, x):
        st.counts[self._cols(x)] += 1
        st.n += 1

    def remove_obs(self, st, x):
        cols = self._cols(x)
        if st.n < 1 or np.any(st.counts[cols] < 1):
            raise ValueError("observation is not counted in this component")
        st.counts[cols] -= 1
        st.n -= 1

    def log_weight_existing(self, st, x):
        _require_nonempty(st)
        m = st.counts[self._cols(x)]
        kq = np.asarray(self.cards, dtype=np.float64)
        return float(np.sum(np.log(m + self.eta) - np.log(st.n + self.eta * kq)))

    def log_new_singleton(self, x):
        return -float(np.sum(np.log(self.cards)))

    def log_marginal_likelihood(self, labels, values):
        x = self.check_data(values)
        labels = np.asarray(labels)
        eta, cards = self.eta, self.cards
        out = 0.0
        for r in np.unique(labels):
            xr = x[labels == r]
            n = len(xr)
            for q, kq in enumerate(cards):
                m = np.bincount(xr[:, q], minlength=kq)
                out += math.lgamma(eta * kq) - math.lgamma(n + eta * kq)
                out += float(np.sum(gammaln(m + eta))) - kq * math.lgamma(eta)
        return out

    def estimate(self, st):
        probs = []
        for q, kq in enumerate(self.cards):
            m = st.counts[self.offsets[q] : self.offsets[q + 1]]
            probs.append((m + self.eta) / (st.n + self.eta * kq))
        return {"probabilities": probs}

    def kernel_arrays(self, values):
        x = self.check_data(values)
        n_obs = len(x)
        cards = np.asarray(self.cards, dtype=np.int64)
        tab_a = np.log(np.arange(n_obs + 2, dtype=np.float64) + self.eta)
        n = np.arange(n_obs + 2, dtype=np.float64)
        tab_b = np.log(n[:, None] + self.eta * cards[None, :]).sum(axis=1)
        single = np.full(n_obs, -float(np.sum(np.log(cards))))
        fpar = np.array([self.eta, 0.0, 0.0, 0.0])
        return ModelArrays(
            CATEGORICAL, fpar, np.zeros(0), x + self.offsets[:-1][None, :], tab_a, tab_b,
            single, cards, self.offsets,
        )

    def stats_arrays(self, n_obs):
        return StatsArrays(np.zeros((n_obs, 2)), np.zeros((n_obs, int(sum(self.cards))), np.int64))


def model_from_name(name: str, **kw) -> ModelConfig:
    classes = {"null": NullModel, "gaussian": GaussianModel, "poisson": PoissonModel,
               "categorical": CategoricalModel}
    if name not in classes:
        raise ValueError(f"unknown model {name!r}")
    return classes[name](**kw)


# -- module-level operations ---------------------------------------------------


def log_weight_existing(model: ModelConfig, stats: ComponentStats, i: int, data) -> float:
    """log w_s for placing observation ``i`` in a component with stats ``stats``
    (which must not already count ``i``)."""
    return model.log_weight_existing(stats, data[i])


def log_weight_new(model: ModelConfig, i: int, data, k: int, n_obs: int,
                   prior: PriorConfig = PriorConfig()) -> float:
    """log w_{k+1} for making ``i`` a new singleton; ``k`` counts components
    without ``i``."""
    if not 1 <= k < n_obs:
        raise ValueError(f"new component impossible at k={k}, N={n_obs}")
    if prior.eta == 1.0:
        base = 2.0 * math.log(k) - math.log(n_obs - k)
    else:
        base = (math.log(k) + _log_norm_factor(n_obs, k + 1, prior.eta)
                - _log_norm_factor(n_obs, k, prior.eta))
    dk = log_k_prior(prior, k + 1, n_obs) - log_k_prior(prior, k, n_obs)
    return base + dk + model.log_new_singleton(data[i])


def add_obs(model: ModelConfig, stats: ComponentStats, i: int, data) -> None:
    model.add_obs(stats, data[i])


def remove_obs(model: ModelConfig, stats: ComponentStats, i: int, data) -> None:
    model.remove_obs(stats, data[i])


def log_marginal_likelihood(model: ModelConfig, state, data) -> float:
    """log P(x | k, z); ``state`` is a PartitionState or an array of labels."""
    labels = state.assignment() if hasattr(state, "assignment") else np.asarray(state)
    return model.log_marginal_likelihood(labels, data)


def estimate_parameters(model: ModelConfig, state, data) -> list[dict]:
    """Posterior parameter summaries for every component of ``state``.

    Each entry carries the 1-based label, size, share of observations and
    the model-specific posterior quantities.
    """
    labels = state.assignment() if hasattr(state, "assignment") else np.asarray(state)
    n_obs = len(labels)
    out = []
    for r in np.unique(labels):
        members = np.flatnonzero(labels == r)
        st = model.stats_for(members, data)
        entry = {"label": int(r), "size": int(st.n), "share": st.n / n_obs}
        entry.update(model.estimate(st))
        out.append(entry)
    return out


# -- compiled primitives over slot-indexed statistics --------------------------


@njit(cache=True)
def kernel_log_weight(m, st, slot, n, i):
    fam = m.family
    if fam == GAUSSIAN:
        d = m.xf[i] - st.fs[slot, 0]
        return m.tab_a[n] - m.tab_b[n] * d * d
    elif fam == POISSON:
        X = st.cs[slot, 0]
        x = m.xi[i, 0]
        a = m.fpar[0]
        return (m.tab_a[X + x] - m.tab_a[X]
                + (X + a) * m.tab_b[n] - (X + x + a) * m.tab_b[n + 1])
    elif fam == CATEGORICAL:
        acc = -m.tab_b[n]
        for q in range(m.xi.shape[1]):
            acc += m.tab_a[st.cs[slot, m.xi[i, q]]]
        return acc
    return 0.0


@njit(cache=True)
def kernel_add(m, st, slot, n, i):
    fam = m.family
    if fam == GAUSSIAN:
        mean, m2 = gauss_add(n, st.fs[slot, 0], st.fs[slot, 1], m.xf[i])
        st.fs[slot, 0] = mean
        st.fs[slot, 1] = m2
    elif fam == POISSON:
        st.cs[slot, 0] += m.xi[i, 0]
    elif fam == CATEGORICAL:
        for q in range(m.xi.shape[1]):
            st.cs[slot, m.xi[i, q]] += 1


@njit(cache=True)
def kernel_remove(m, st, slot, n, i):
    fam = m.family
    if fam == GAUSSIAN:
        mean, m2 = gauss_remove(n, st.fs[slot, 0], st.fs[slot, 1], m.xf[i])
        st.fs[slot, 0] = mean
        st.fs[slot, 1] = m2
    elif fam == POISSON:
        st.cs[slot, 0] -= m.xi[i, 0]
    elif fam == CATEGORICAL:
        for q in range(m.xi.shape[1]):
            st.cs[slot, m.xi[i, q]] -= 1


@njit(cache=True)
def kernel_rebuild_stats(p, m, st):
    """Recompute every slot's statistics from its members (two-pass for Gaussian)."""
    n_slots = p.size.shape[0]
    for slot in range(n_slots):
        n = p.size[slot]
        off = p.offset[slot]
        if m.family == GAUSSIAN:
            s = 0.0
            for j in range(n):
                s += m.xf[p.pool[off + j]]
            mean = s / n if n > 0 else 0.0
            ss = 0.0
            for j in range(n):
                d = m.xf[p.pool[off + j]] - mean
                ss += d * d
            st.fs[slot, 0] = mean
            st.fs[slot, 1] = ss
        else:
            for c in range(st.cs.shape[1]):
                st.cs[slot, c] = 0
            for j in range(n):
                kernel_add(m, st, slot, j, p.pool[off + j])


@njit(cache=True)
def kernel_log_marginal(p, m, st):
    k = p.meta[0]
    n_obs = p.obs_slot.shape[0]
    fam = m.family
    out = 0.0
    if fam == GAUSSIAN:
        sigma2 = m.fpar[0]
        out = -k * m.fpar[1] - 0.5 * (n_obs - k) * math.log(2.0 * math.pi * sigma2)
        for r in range(k):
            slot = p.slot_of_label[r]
            out -= 0.5 * math.log(p.size[slot]) + st.fs[slot, 1] / (2.0 * sigma2)
    elif fam == POISSON:
        a = m.fpar[0]
        b = m.fpar[1]
        out = m.fpar[2] + k * (a * math.log(b) - m.tab_a[0])
        for r in range(k):
            slot = p.slot_of_label[r]
            X = st.cs[slot, 0]
            out += m.tab_a[X] - (X + a) * m.tab_b[p.size[slot]]
    elif fam == CATEGORICAL:
        eta = m.fpar[0]
        lg_eta = math.lgamma(eta)
        for r in range(k):
            slot = p.slot_of_label[r]
            n = p.size[slot]
            for q in range(m.card.shape[0]):
                kq = m.card[q]
                out += math.lgamma(eta * kq) - math.lgamma(n + eta * kq)
                for c in range(m.coff[q], m.coff[q + 1]):
                    out += math.lgamma(st.cs[slot, c] + eta) - lg_eta
    return out
