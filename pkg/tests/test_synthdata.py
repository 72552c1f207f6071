import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from mixmc.priors import draw_assignment
from mixmc.synthdata import SynthSpec, gen_categorical, gen_gaussian, gen_poisson, generate
from oracle import labelled_assignments, log_pz_generative


def test_gaussian_single_component():
    data, labels = gen_gaussian(SynthSpec("gaussian", k_true=1, n_obs=4, seed=0))
    assert data.kind == "real" and data.n_obs == 4
    assert np.all(labels == 1)


def test_gaussian_equal_split_and_means():
    _, labels = gen_gaussian(SynthSpec("gaussian", k_true=3, n_obs=9))
    assert np.bincount(labels).tolist() == [0, 3, 3, 3]
    _, labels = gen_gaussian(SynthSpec("gaussian", k_true=3, n_obs=11))
    assert np.bincount(labels).tolist() == [0, 4, 4, 3]
    data, labels = gen_gaussian(SynthSpec("gaussian", k_true=3, n_obs=30_000, seed=1))
    for r in (1, 2, 3):
        # standard error 1/sqrt(10^4) = 0.01
        assert abs(data.values[labels == r].mean() - 3 * r) < 0.05


def test_gaussian_benchmark_scale_shape():
    data, labels = gen_gaussian(SynthSpec("gaussian", k_true=5, n_obs=10_000, seed=2))
    assert data.n_obs == 10_000 and np.all(np.bincount(labels)[1:] == 2000)


def test_gaussian_spacing_parameter():
    data, labels = gen_gaussian(SynthSpec("gaussian", k_true=2, n_obs=20_000, spacing=10.0))
    assert abs(data.values[labels == 2].mean() - 20.0) < 0.05
    with pytest.raises(ValueError):
        gen_gaussian(SynthSpec("gaussian", k_true=2, n_obs=10, spacing=0.0))


def test_poisson_single_mean():
    data, _ = gen_poisson(SynthSpec("poisson", n_obs=100_000, means=(5.0,), seed=3))
    se = math.sqrt(5.0 / 100_000)
    assert abs(data.values.mean() - 5.0) < 3 * se
    assert data.values.dtype == np.int64


def test_poisson_shares():
    _, labels = gen_poisson(SynthSpec("poisson", n_obs=853, means=(7.382, 15.987),
                                      weights=(0.547, 0.453)))
    assert np.bincount(labels).tolist() == [0, 467, 386]
    with pytest.raises(ValueError):
        gen_poisson(SynthSpec("poisson", n_obs=10, means=(1.0, 2.0), weights=(1.0,)))
    with pytest.raises(ValueError):
        gen_poisson(SynthSpec("poisson", n_obs=10, means=(0.0,)))


def test_categorical_single_class():
    data, labels = gen_categorical(SynthSpec("categorical", k_true=1, n_obs=50, n_questions=3,
                                             n_answers=2))
    assert np.all(labels == 1)
    assert data.values.shape == (50, 3) and data.cardinalities == (2, 2, 2)


def test_categorical_codes_in_range():
    data, labels = gen_categorical(SynthSpec("categorical", k_true=4, n_obs=1000,
                                             n_questions=10, n_answers=4, seed=5))
    assert data.values.min() >= 0 and data.values.max() <= 3
    assert set(np.unique(labels)) == {1, 2, 3, 4}


def test_categorical_never_empty():
    rng = np.random.default_rng(6)
    for _ in range(10_000):
        n = int(rng.integers(1, 15))
        k = int(rng.integers(1, n + 1))
        z = draw_assignment(n, k, 1.0, rng)
        assert len(np.unique(z)) == k


@pytest.mark.parametrize("n, k, eta", [(4, 2, 1.0), (5, 3, 1.0), (6, 2, 2.0), (5, 2, 0.5)])
def test_assignment_marginals_chi_squared(n, k, eta):
    rng = np.random.default_rng(100 * n + k)
    draws = 100_000
    seen = Counter(tuple(draw_assignment(n, k, eta, rng)) for _ in range(draws))
    support = list(labelled_assignments(n, k))
    assert set(seen) <= set(support)
    p = np.array([math.exp(log_pz_generative(np.bincount(z, minlength=k).tolist(), eta))
                  for z in support])
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    obs = np.array([seen.get(z, 0) for z in support])
    _, pval = stats.chisquare(obs, draws * p)
    assert pval > 1e-3


def test_generation_is_deterministic():
    for family in ("gaussian", "poisson", "categorical"):
        spec = SynthSpec(family, k_true=3, n_obs=200, seed=9, means=(2.0, 5.0, 9.0))
        (a, la), (b, lb) = generate(spec), generate(spec)
        assert np.array_equal(a.values, b.values) and np.array_equal(la, lb)
        c, _ = generate(SynthSpec(family, k_true=3, n_obs=200, seed=10, means=(2.0, 5.0, 9.0)))
        assert not np.array_equal(a.values, c.values)


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec("beta")
    with pytest.raises(ValueError):
        SynthSpec("gaussian", k_true=0)
    with pytest.raises(ValueError):
        SynthSpec("gaussian", k_true=5, n_obs=4)
