"""Rejection-free Monte Carlo over (k, z) for integrable mixtures.

One step picks a component, then one of its members, detaches that member
(deleting the component if it empties), and re-places it in one of the k
existing components or in a new singleton, with probability proportional to
the marginal-likelihood ratio of each candidate.  Because components are
picked uniformly rather than observations, the assignment prior is sampled
exactly by the proposal and never appears in the weights.

For a concentration eta other than 1 the component is picked with
size-dependent rates and each visited state carries a continuous-time dwell
``k / sum(rates)``; estimators are dwell-weighted averages.
"""

from __future__ import annotations

import math
import time
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from numba import njit, types
from numba.typed import Dict

from .models import (
    GAUSSIAN,
    ModelConfig,
    NullModel,
    kernel_add,
    kernel_log_marginal,
    kernel_log_weight,
    kernel_rebuild_stats,
    kernel_remove,
)
from .priors import (
    PriorConfig,
    component_rate_table,
    draw_assignment,
    log_assignment_tables,
    log_k_prior_table,
    new_component_log_factor,
)
from .state import PartitionState, insert_at, labels_of, remove_at

__all__ = [
    "RunConfig",
    "SampleRecord",
    "RunResult",
    "Chain",
    "make_rng",
    "step",
    "step_general_eta",
    "run",
]

PriorArrays = namedtuple("PriorArrays", "log_new rate lpk lpz_k lpz_size")

RNG_DESCRIPTION = "numpy PCG64 seeded by SeedSequence(seed, spawn_key=(chain,))"


def make_rng(seed: int, chain: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chain,))))


def prior_arrays(prior: PriorConfig, n_obs: int) -> PriorArrays:
    lpz_k, lpz_size = log_assignment_tables(prior.eta, n_obs)
    return PriorArrays(
        new_component_log_factor(prior, n_obs),
        component_rate_table(prior.eta, n_obs),
        log_k_prior_table(prior, n_obs),
        lpz_k,
        lpz_size,
    )


# -- compiled kernels ----------------------------------------------------------


@njit(cache=True)
def _dwell(p, pr):
    k = p.meta[0]
    tot = 0.0
    for r in range(k):
        tot += pr.rate[p.size[p.slot_of_label[r]]]
    return k / tot


@njit(cache=True)
def _candidate_log_weights(p, m, st, pr, i, lw):
    """Fill lw[0..k] for detached observation i; lw[k] is the new component."""
    k = p.meta[0]
    for s in range(k):
        slot = p.slot_of_label[s]
        lw[s] = kernel_log_weight(m, st, slot, p.size[slot], i)
    if k == 0:
        lw[0] = 0.0
    else:
        lw[k] = pr.log_new[k] + m.single[i]
    return k + 1


@njit(cache=True)
def _choose(lw, n_cand, u):
    mx = lw[0]
    for s in range(1, n_cand):
        if lw[s] > mx:
            mx = lw[s]
    tot = 0.0
    for s in range(n_cand):
        w = math.exp(lw[s] - mx)
        lw[s] = w
        tot += w
    target = u * tot
    acc = 0.0
    for s in range(n_cand):
        acc += lw[s]
        if target < acc:
            return s
    return n_cand - 1


@njit(cache=True)
def _advance(p, m, st, pr, rng, lw, general, n_steps, refresh_every, counters, clock):
    """Run ``n_steps`` moves, crediting each pre-move state's dwell to ``clock``.

    counters = [moves that changed the partition, moves that did not,
    steps since the last statistics rebuild].  The move is written out here
    rather than in a helper: passing the array bundles through a non-inlined
    call per step costs more than the move itself.
    """
    since = counters[2]
    for _ in range(n_steps):
        k = p.meta[0]
        if general:
            tot = 0.0
            for j in range(k):
                tot += pr.rate[p.size[p.slot_of_label[j]]]
            target = rng.random() * tot
            r = k - 1
            acc = 0.0
            for j in range(k):
                acc += pr.rate[p.size[p.slot_of_label[j]]]
                if target < acc:
                    r = j
                    break
            clock[0] += k / tot
        else:
            r = int(rng.random() * k)
            if r >= k:
                r = k - 1
            clock[0] += 1.0
        slot = p.slot_of_label[r]
        n = p.size[slot]
        idx = int(rng.random() * n)
        if idx >= n:
            idx = n - 1
        i, deleted = remove_at(p, r, idx)
        kernel_remove(m, st, slot, n, i)
        n_cand = _candidate_log_weights(p, m, st, pr, i, lw)
        s = _choose(lw, n_cand, rng.random())
        dest = p.slot_of_label[s]
        kernel_add(m, st, dest, p.size[dest], i)
        insert_at(p, i, s)
        if (s != n_cand - 1) if deleted else (s != r):
            counters[0] += 1
        else:
            counters[1] += 1
        if refresh_every > 0:
            since += 1
            if since >= refresh_every:
                kernel_rebuild_stats(p, m, st)
                since = 0
    counters[2] = since


@njit(cache=True)
def _step(p, m, st, pr, rng, lw, general):
    """One move.  Returns (dwell of the pre-move state, changed)."""
    counters = np.zeros(3, dtype=np.int64)
    clock = np.zeros(1)
    _advance(p, m, st, pr, rng, lw, general, 1, 0, counters, clock)
    return clock[0], counters[0] == 1


@njit(cache=True)
def _log_prior(p, pr):
    k = p.meta[0]
    out = pr.lpk[k] + pr.lpz_k[k]
    for r in range(k):
        out += pr.lpz_size[p.size[p.slot_of_label[r]]]
    return out


@njit(cache=True)
def _record_coincidence(p, cons, weight):
    k = p.meta[0]
    for r in range(k):
        slot = p.slot_of_label[r]
        off = p.offset[slot]
        n = p.size[slot]
        for a in range(n):
            ia = p.pool[off + a]
            for b in range(n):
                cons[ia, p.pool[off + b]] += weight


@njit(cache=True, nogil=True)
def _run(p, m, st, pr, rng, lw, general, n_burn, n_rec, steps_per_rec, refresh_every,
         counters, clock, rec_k, rec_lp, rec_ll, rec_dwell, rec_z, cons, best_z, best_lp):
    _advance(p, m, st, pr, rng, lw, general, n_burn, refresh_every, counters, clock)
    record_z = rec_z.shape[0] > 0
    record_c = cons.shape[0] > 0
    for j in range(n_rec):
        _advance(p, m, st, pr, rng, lw, general, steps_per_rec, refresh_every, counters, clock)
        ll = kernel_log_marginal(p, m, st)
        rec_k[j] = p.meta[0]
        rec_ll[j] = ll
        rec_lp[j] = ll + _log_prior(p, pr)
        if rec_lp[j] > best_lp[0]:
            best_lp[0] = rec_lp[j]
            labels_of(p, best_z)
        dwell = _dwell(p, pr) if general else 1.0
        rec_dwell[j] = dwell
        if record_z:
            for i in range(p.obs_slot.shape[0]):
                rec_z[j, i] = p.label_of_slot[p.obs_slot[i]] + 1
        if record_c:
            _record_coincidence(p, cons, dwell)


@njit(cache=True)
def _canonical_code(p, buf):
    # restricted-growth string of the set partition, packed base N
    n_obs = p.obs_slot.shape[0]
    for j in range(n_obs):
        buf[j] = -1
    code = 0
    mult = 1
    nxt = 0
    for i in range(n_obs):
        lab = p.label_of_slot[p.obs_slot[i]]
        if buf[lab] < 0:
            buf[lab] = nxt
            nxt += 1
        code += buf[lab] * mult
        mult *= n_obs
    return code


@njit(cache=True)
def _tally(p, m, st, pr, rng, lw, general, n_steps):
    occ = Dict.empty(key_type=types.int64, value_type=types.float64)
    buf = np.empty(p.obs_slot.shape[0], dtype=np.int64)
    for _ in range(n_steps):
        code = _canonical_code(p, buf)
        dwell, _changed = _step(p, m, st, pr, rng, lw, general)
        if code in occ:
            occ[code] += dwell
        else:
            occ[code] = dwell
    return occ


def decode_partition(code: int, n_obs: int) -> tuple[int, ...]:
    """Restricted-growth labels (0-based) from a packed partition code."""
    out = []
    for _ in range(n_obs):
        out.append(code % n_obs)
        code //= n_obs
    return tuple(out)


# -- Python layer --------------------------------------------------------------


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=NullModel)
    prior: PriorConfig = field(default_factory=PriorConfig)
    burn_in_sweeps: int = 1000
    sample_sweeps: int = 10000
    thin: int = 1
    seed: int = 0
    chain: int = 0
    general_eta: bool | None = None
    record_assignments: bool = False
    record_coincidence: bool = False
    init: str = "single"
    audit: bool = False

    def __post_init__(self):
        if self.burn_in_sweeps < 0:
            raise ValueError("burn_in_sweeps must be >= 0")
        if self.sample_sweeps < 1:
            raise ValueError("sample_sweeps must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.init not in ("single", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.general_eta is False and self.prior.eta != 1.0:
            raise ValueError("eta != 1 requires the continuous-time kernel")

    @property
    def eta(self) -> float:
        return self.prior.eta


@dataclass
class SampleRecord:
    sweep: int
    k: int
    log_posterior: float
    log_likelihood: float
    dwell: float
    assignment: np.ndarray | None = None


class Chain:
    """A single sampler chain: partition, statistics, RNG and clock."""

    def __init__(self, data, model: ModelConfig, prior: PriorConfig | None = None,
                 seed: int = 0, chain: int = 0, general: bool | None = None,
                 init: str = "single", labels=None):
        prior = prior or PriorConfig()
        values = model.check_data(data)
        if len(values) == 0:
            raise ValueError("dataset is empty")
        self.model = model.resolve(values)
        self.values = self.model.check_data(values)
        self.prior = prior
        if general is None:
            general = prior.eta != 1.0
        if not general and prior.eta != 1.0:
            raise ValueError("eta != 1 requires the continuous-time kernel")
        self.general = bool(general)
        self.rng = make_rng(seed, chain)
        n_obs = len(self.values)
        if labels is None and init == "random":
            pk = np.exp(log_k_prior_table(prior, n_obs)[1 : n_obs + 1])
            k0 = 1 + int(self.rng.choice(n_obs, p=pk / pk.sum()))
            labels = draw_assignment(n_obs, k0, prior.eta, self.rng)
        self.state = PartitionState(n_obs, labels)
        self._m = self.model.kernel_arrays(self.values)
        self._st = self.model.stats_arrays(n_obs)
        kernel_rebuild_stats(self.state.arrays, self._m, self._st)
        self._pr = prior_arrays(prior, n_obs)
        self._lw = np.empty(n_obs + 1)
        # Welford downdates drift; rebuild Gaussian statistics once per sweep
        self._refresh = n_obs if self.model.family == GAUSSIAN else 0
        self.counters = np.zeros(3, dtype=np.int64)
        self.clock = np.zeros(1)

    @property
    def n_obs(self) -> int:
        return self.state.n_obs

    @property
    def k(self) -> int:
        return self.state.k

    @property
    def time(self) -> float:
        return float(self.clock[0])

    def _args(self):
        return self.state.arrays, self._m, self._st, self._pr, self.rng, self._lw

    def step(self, general: bool | None = None) -> tuple[float, bool]:
        general = self.general if general is None else general
        dwell, changed = _step(*self._args(), general)
        self.clock[0] += dwell
        self.counters[0 if changed else 1] += 1
        return float(dwell), bool(changed)

    def advance(self, n_steps: int) -> None:
        _advance(*self._args(), self.general, n_steps, self._refresh, self.counters, self.clock)

    def dwell(self) -> float:
        return float(_dwell(self.state.arrays, self._pr)) if self.general else 1.0

    def log_likelihood(self) -> float:
        return float(kernel_log_marginal(self.state.arrays, self._m, self._st))

    def log_posterior(self) -> float:
        return self.log_likelihood() + float(_log_prior(self.state.arrays, self._pr))

    def refresh_statistics(self) -> None:
        kernel_rebuild_stats(self.state.arrays, self._m, self._st)

    def tally(self, n_steps: int) -> dict[tuple[int, ...], float]:
        """Dwell-weighted time spent in each set partition over ``n_steps`` steps.

        Keys are restricted-growth label tuples.  Only for small N (<= 12).
        """
        if self.n_obs > 12:
            raise ValueError("partition tally is limited to N <= 12")
        occ = _tally(*self._args(), self.general, n_steps)
        return {decode_partition(int(c), self.n_obs): float(w) for c, w in occ.items()}

    def move_weights(self, r: int, idx: int):
        """Candidate probabilities for detaching member ``idx`` of component ``r``
        (1-based) without touching the chain.

        Returns (obs id, deleted, detached PartitionState, probabilities) where
        the last entry of ``probabilities`` is the new-component move.
        """
        state = self.state.copy()
        st = type(self._st)(*(a.copy() for a in self._st))
        p = state.arrays
        slot = p.slot_of_label[r - 1]
        n = p.size[slot]
        i, deleted = remove_at(p, r - 1, idx)
        kernel_remove(self._m, st, slot, n, i)
        lw = np.empty(self.n_obs + 1)
        n_cand = _candidate_log_weights(p, self._m, st, self._pr, i, lw)
        w = lw[:n_cand]
        probs = np.exp(w - w.max())
        return int(i), bool(deleted), state, probs / probs.sum()


def step(chain: Chain) -> bool:
    """One move of the eta = 1 algorithm; returns whether the partition changed."""
    if chain.prior.eta != 1.0:
        raise ValueError("step() implements eta = 1; use step_general_eta")
    return chain.step(general=False)[1]


def step_general_eta(chain: Chain) -> float:
    """One continuous-time move; returns the dwell credited to the pre-move state."""
    return chain.step(general=True)[0]


@dataclass
class RunResult:
    config: RunConfig
    model: ModelConfig
    n_obs: int
    sweeps: np.ndarray
    k: np.ndarray
    log_posterior: np.ndarray
    log_likelihood: np.ndarray
    dwell: np.ndarray
    assignments: np.ndarray | None
    coincidence: np.ndarray | None
    final_state: PartitionState
    best_assignment: np.ndarray
    best_log_posterior: float
    moves_changed: int
    moves_unchanged: int
    seconds: float
    general: bool

    @property
    def seconds_per_sweep(self) -> float:
        total = self.config.burn_in_sweeps + self.config.sample_sweeps
        return self.seconds / total

    @property
    def steps_per_second(self) -> float:
        total = (self.config.burn_in_sweeps + self.config.sample_sweeps) * self.n_obs
        return total / self.seconds if self.seconds > 0 else float("inf")

    def __len__(self) -> int:
        return len(self.k)

    def records(self):
        for j in range(len(self.k)):
            yield SampleRecord(
                int(self.sweeps[j]), int(self.k[j]), float(self.log_posterior[j]),
                float(self.log_likelihood[j]), float(self.dwell[j]),
                None if self.assignments is None else self.assignments[j],
            )

    def summary(self) -> dict:
        return {
            "n_obs": self.n_obs,
            "n_samples": len(self),
            "moves_changed": self.moves_changed,
            "moves_unchanged": self.moves_unchanged,
            "seconds": self.seconds,
            "ms_per_sweep": 1e3 * self.seconds_per_sweep,
            "steps_per_second": self.steps_per_second,
            "final_k": self.final_state.k,
            "general_eta_kernel": self.general,
        }


def run(data, cfg: RunConfig) -> RunResult:
    """Burn in, then sample ``cfg.sample_sweeps`` sweeps keeping every ``thin``-th."""
    chain = Chain(data, cfg.model, cfg.prior, seed=cfg.seed, chain=cfg.chain,
                  general=cfg.general_eta, init=cfg.init)
    n_obs = chain.n_obs
    n_rec = cfg.sample_sweeps // cfg.thin
    steps_per_rec = cfg.thin * n_obs
    rec_k = np.zeros(n_rec, dtype=np.int64)
    rec_lp = np.zeros(n_rec)
    rec_ll = np.zeros(n_rec)
    rec_dwell = np.zeros(n_rec)
    rec_z = np.zeros((n_rec if cfg.record_assignments else 0, n_obs), dtype=np.int32)
    cons = np.zeros((n_obs, n_obs) if cfg.record_coincidence else (0, 0))

    best_z = np.zeros(n_obs, dtype=np.int64)
    best_lp = np.full(1, -np.inf)
    args = (*chain._args(), chain.general)
    # compile outside the timed region
    _run(*args, 0, 0, 0, chain._refresh, np.zeros(3, np.int64), np.zeros(1),
         rec_k[:0], rec_lp[:0], rec_ll[:0], rec_dwell[:0], rec_z[:0], cons[:0, :0],
         best_z.copy(), best_lp.copy())

    t0 = time.perf_counter()
    if cfg.audit:
        _audited_run(chain, cfg, n_rec, rec_k, rec_lp, rec_ll, rec_dwell, rec_z, cons,
                     best_z, best_lp)
    else:
        _run(*args, cfg.burn_in_sweeps * n_obs, n_rec, steps_per_rec, chain._refresh,
             chain.counters, chain.clock, rec_k, rec_lp, rec_ll, rec_dwell, rec_z, cons,
             best_z, best_lp)
    seconds = time.perf_counter() - t0

    sweeps = cfg.burn_in_sweeps + cfg.thin * np.arange(1, n_rec + 1)
    return RunResult(
        config=cfg, model=chain.model, n_obs=n_obs, sweeps=sweeps, k=rec_k,
        log_posterior=rec_lp, log_likelihood=rec_ll, dwell=rec_dwell,
        assignments=rec_z if cfg.record_assignments else None,
        coincidence=cons if cfg.record_coincidence else None,
        final_state=chain.state, best_assignment=_first_appearance(best_z),
        best_log_posterior=float(best_lp[0]), moves_changed=int(chain.counters[0]),
        moves_unchanged=int(chain.counters[1]), seconds=seconds, general=chain.general,
    )


def _first_appearance(z: np.ndarray) -> np.ndarray:
    # 1-based labels numbered in order of first appearance
    _, first, inv = np.unique(z, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(1, len(first) + 1)
    return rank[inv]


def _audited_run(chain, cfg, n_rec, rec_k, rec_lp, rec_ll, rec_dwell, rec_z, cons,
                 best_z, best_lp):
    n_obs = chain.n_obs

    def audited_steps(n_steps):
        for t in range(n_steps):
            chain.step()
            chain.state.audit()
            if chain._refresh and (t + 1) % n_obs == 0:
                chain.refresh_statistics()

    audited_steps(cfg.burn_in_sweeps * n_obs)
    for j in range(n_rec):
        audited_steps(cfg.thin * n_obs)
        rec_k[j] = chain.k
        rec_ll[j] = chain.log_likelihood()
        rec_lp[j] = chain.log_posterior()
        rec_dwell[j] = chain.dwell()
        if len(rec_z):
            rec_z[j] = chain.state.assignment()
        if len(cons):
            _record_coincidence(chain.state.arrays, cons, rec_dwell[j])
        if rec_lp[j] > best_lp[0]:
            best_lp[0] = rec_lp[j]
            best_z[:] = chain.state.assignment()
