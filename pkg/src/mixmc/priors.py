"""Priors on the number of components and on assignments without empty components."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

__all__ = [
    "PriorConfig",
    "log_k_prior",
    "log_assignment_prior",
    "draw_assignment",
]


@dataclass(frozen=True)
class PriorConfig:
    """Prior on k plus the assignment concentration ``eta``.

    ``k_prior`` is ``"uniform"`` (P(k) = 1/N) or ``"geometric"``
    (P(k) proportional to ``ratio**k`` on 1..N).
    """

    k_prior: str = "uniform"
    ratio: float = 0.5
    eta: float = 1.0

    def __post_init__(self):
        if self.k_prior not in ("uniform", "geometric"):
            raise ValueError(f"unknown k prior {self.k_prior!r}")
        if self.k_prior == "geometric" and not 0.0 < self.ratio < 1.0:
            raise ValueError("geometric ratio must lie in (0, 1)")
        if not self.eta > 0.0:
            raise ValueError("eta must be positive")

    @classmethod
    def parse(cls, text: str, eta: float = 1.0) -> "PriorConfig":
        """``"uniform"`` or ``"geometric:A"``."""
        name, _, arg = text.partition(":")
        if name == "geometric":
            if not arg:
                raise ValueError("geometric prior needs a ratio, e.g. geometric:0.5")
            return cls("geometric", float(arg), eta)
        if arg:
            raise ValueError(f"unexpected argument in k prior {text!r}")
        return cls(name, eta=eta)

    def describe(self) -> str:
        return "uniform" if self.k_prior == "uniform" else f"geometric:{self.ratio}"


def log_k_prior(cfg: PriorConfig, k: int, n_obs: int) -> float:
    if not 1 <= k <= n_obs:
        raise ValueError(f"k={k} outside 1..{n_obs}")
    if cfg.k_prior == "uniform":
        return -math.log(n_obs)
    a = cfg.ratio
    # log sum_{j=1}^N a^j = log a + log(1 - a^N) - log(1 - a)
    log_norm = math.log(a) + math.log1p(-(a**n_obs)) - math.log1p(-a)
    return k * math.log(a) - log_norm


def log_k_prior_table(cfg: PriorConfig, n_obs: int) -> np.ndarray:
    """log P(k) at index k for k = 1..N; index 0 is -inf."""
    out = np.full(n_obs + 2, -np.inf)
    for k in range(1, n_obs + 1):
        out[k] = log_k_prior(cfg, k, n_obs)
    return out


def _log_norm_factor(n_obs: int, k: int, eta: float) -> float:
    # log[(N-k) B(N-k, k eta)] written as lgamma(N-k+1) + lgamma(k eta) - lgamma(N-k+k eta),
    # which stays finite at k = N where it equals 0
    return math.lgamma(n_obs - k + 1) + math.lgamma(k * eta) - math.lgamma(n_obs - k + k * eta)


def log_assignment_prior(sizes, eta: float = 1.0) -> float:
    """log P(z | k, eta) for a labelled assignment with component sizes ``sizes``."""
    sizes = [int(n) for n in sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError("every component must hold at least one observation")
    if not eta > 0:
        raise ValueError("eta must be positive")
    n_obs, k = sum(sizes), len(sizes)
    if eta == 1.0:
        log_binom = math.lgamma(n_obs) - math.lgamma(k) - math.lgamma(n_obs - k + 1)
        return -log_binom + sum(math.lgamma(n + 1) for n in sizes) - math.lgamma(n_obs + 1)
    per_component = sum(
        math.log(n) + math.lgamma(n + eta - 1) - math.lgamma(eta) for n in sizes
    )
    return -math.lgamma(n_obs + 1) + _log_norm_factor(n_obs, k, eta) + per_component


def draw_assignment(n_obs: int, k: int, eta: float, rng: np.random.Generator) -> np.ndarray:
    """Draw 0-based labels from P(z | k, eta).

    One randomly chosen observation seeds each component; the rest follow a
    Dirichlet-categorical draw with concentration ``eta``.
    """
    if not 1 <= k <= n_obs:
        raise ValueError(f"k={k} outside 1..{n_obs}")
    order = rng.permutation(n_obs)
    z = np.empty(n_obs, dtype=np.int64)
    z[order[:k]] = np.arange(k)
    if n_obs > k:
        weights = rng.dirichlet(np.full(k, eta))
        z[order[k:]] = rng.choice(k, size=n_obs - k, p=weights)
    return z


# Tables consumed by the compiled sampler.  Index by k or by component size.


def new_component_log_factor(cfg: PriorConfig, n_obs: int) -> np.ndarray:
    """log of the prior part of the new-component weight, indexed by current k.

    eta = 1: k^2 / (N - k) * P(k+1) / P(k); general eta replaces k^2/(N-k) by
    k (N-k-1) B(N-k-1, (k+1) eta) / [(N-k) B(N-k, k eta)].
    """
    lpk = log_k_prior_table(cfg, n_obs)
    out = np.full(n_obs + 1, -np.inf)
    for k in range(1, n_obs):
        if cfg.eta == 1.0:
            base = 2.0 * math.log(k) - math.log(n_obs - k)
        else:
            base = (
                math.log(k)
                + _log_norm_factor(n_obs, k + 1, cfg.eta)
                - _log_norm_factor(n_obs, k, cfg.eta)
            )
        out[k] = base + lpk[k + 1] - lpk[k]
    return out


def component_rate_table(eta: float, n_obs: int) -> np.ndarray:
    """Selection weight of a component of size n (continuous-time kernel)."""
    n = np.arange(n_obs + 1, dtype=np.float64)
    out = np.ones(n_obs + 1)
    if n_obs >= 2:
        out[2:] = (n[2:] - 1.0) / (n[2:] + eta - 2.0)
    out[0] = 0.0
    return out


def log_assignment_tables(eta: float, n_obs: int) -> tuple[np.ndarray, np.ndarray]:
    """(per-k term, per-size term) such that log P(z|k,eta) = a[k] + sum_r b[n_r]."""
    per_k = np.full(n_obs + 1, -np.inf)
    for k in range(1, n_obs + 1):
        if eta == 1.0:
            per_k[k] = (
                -(math.lgamma(n_obs) - math.lgamma(k) - math.lgamma(n_obs - k + 1))
                - math.lgamma(n_obs + 1)
            )
        else:
            per_k[k] = -math.lgamma(n_obs + 1) + _log_norm_factor(n_obs, k, eta)
    n = np.arange(1, n_obs + 1, dtype=np.float64)
    per_size = np.zeros(n_obs + 1)
    if eta == 1.0:
        per_size[1:] = gammaln(n + 1.0)
    else:
        per_size[1:] = np.log(n) + gammaln(n + eta - 1.0) - gammaln(eta)
    return per_k, per_size
