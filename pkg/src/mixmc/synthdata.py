"""Synthetic mixture data with known component labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .priors import draw_assignment

__all__ = ["SynthSpec", "gen_gaussian", "gen_poisson", "gen_categorical", "generate"]


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    Gaussian: component r = 1..k has mean ``spacing * r`` and standard
    deviation ``sigma``.  Poisson: ``means`` gives one rate per component
    (its length overrides ``k_true``) and ``weights`` optional mixture
    shares.  Categorical: ``n_questions`` questions with ``n_answers``
    responses each and Dirichlet(``theta_eta``) response probabilities.
    """

    family: str = "gaussian"
    k_true: int = 5
    n_obs: int = 10_000
    seed: int = 0
    spacing: float = 3.0
    sigma: float = 1.0
    means: tuple[float, ...] | None = None
    weights: tuple[float, ...] | None = None
    n_questions: int = 10
    n_answers: int | tuple[int, ...] = 4
    theta_eta: float = 1.0
    assignment_eta: float = 1.0

    def __post_init__(self):
        if self.family not in ("gaussian", "poisson", "categorical"):
            raise ValueError(f"unknown family {self.family!r}")
        k = len(self.means) if self.family == "poisson" and self.means else self.k_true
        if k < 1:
            raise ValueError("k_true must be >= 1")
        if self.n_obs < k:
            raise ValueError("n_obs must be >= number of components")

    @property
    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _equal_split(n_obs: int, k: int) -> np.ndarray:
    # remainder goes to the earlier components
    base, extra = divmod(n_obs, k)
    sizes = np.full(k, base)
    sizes[:extra] += 1
    return np.repeat(np.arange(1, k + 1), sizes)


def gen_gaussian(spec: SynthSpec) -> tuple[Dataset, np.ndarray]:
    """Equal-sized components, component r drawn from Normal(spacing*r, sigma^2)."""
    if not spec.spacing > 0:
        raise ValueError("spacing must be positive")
    if not spec.sigma > 0:
        raise ValueError("sigma must be positive")
    labels = _equal_split(spec.n_obs, spec.k_true)
    x = spec.rng.normal(spec.spacing * labels, spec.sigma)
    return Dataset("real", x, columns=["x"]), labels


def gen_poisson(spec: SynthSpec) -> tuple[Dataset, np.ndarray]:
    """Counts from Poisson(means[r]); equal split or multinomial shares."""
    means = np.asarray(spec.means if spec.means else [5.0] * spec.k_true, dtype=np.float64)
    if np.any(means <= 0):
        raise ValueError("Poisson means must be positive")
    k = len(means)
    rng = spec.rng
    if spec.weights is None:
        labels = _equal_split(spec.n_obs, k)
    else:
        w = np.asarray(spec.weights, dtype=np.float64)
        if w.shape != (k,) or np.any(w < 0) or not w.sum() > 0:
            raise ValueError("need one non-negative weight per mean")
        counts = np.round(spec.n_obs * w / w.sum()).astype(np.int64)
        counts[-1] = spec.n_obs - counts[:-1].sum()
        labels = np.repeat(np.arange(1, k + 1), counts)
    x = rng.poisson(means[labels - 1])
    return Dataset("count", x, columns=["x"]), labels


def gen_categorical(spec: SynthSpec) -> tuple[Dataset, np.ndarray]:
    """Latent class data: z from the no-empty-components prior given k,
    response probabilities from a symmetric Dirichlet, answers categorical."""
    cards = spec.n_answers
    if isinstance(cards, int):
        cards = (cards,) * spec.n_questions
    cards = tuple(int(c) for c in cards)
    if len(cards) < 1 or min(cards) < 2:
        raise ValueError("need at least one question and two answers per question")
    rng = spec.rng
    z = draw_assignment(spec.n_obs, spec.k_true, spec.assignment_eta, rng)
    x = np.empty((spec.n_obs, len(cards)), dtype=np.int64)
    for q, kq in enumerate(cards):
        theta = rng.dirichlet(np.full(kq, spec.theta_eta), size=spec.k_true)
        u = rng.random(spec.n_obs)
        cdf = np.cumsum(theta, axis=1)
        x[:, q] = np.minimum((u[:, None] >= cdf[z]).sum(axis=1), kq - 1)
    cols = [f"q{q + 1}" for q in range(len(cards))]
    return Dataset("categorical", x, columns=cols, cardinalities=cards), z + 1


def generate(spec: SynthSpec) -> tuple[Dataset, np.ndarray]:
    return {"gaussian": gen_gaussian, "poisson": gen_poisson,
            "categorical": gen_categorical}[spec.family](spec)
