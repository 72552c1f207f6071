"""Partition of observations into non-empty components.

Members of each component live in a block of a shared integer pool.  Blocks
are addressed through a slot table: component label ``r`` (0-based inside
the kernels) maps to ``slot_of_label[r]``, and every per-component quantity
(member block, size, sufficient statistics) is indexed by slot.  Deleting a
component therefore only swaps two slot handles, never copies members.

Slots whose label is ``>= k`` are empty but keep their block, so a deleted
component's storage is reused by the next component that gets created.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np
from numba import njit

__all__ = ["PartitionState", "InvariantError"]

# meta[0] = k, meta[1] = first free pool position (bump pointer)
PartitionArrays = namedtuple(
    "PartitionArrays",
    "slot_of_label label_of_slot obs_slot size offset cap pool meta",
)


class InvariantError(RuntimeError):
    """Raised by :meth:`PartitionState.audit` when the partition is corrupt."""


def _empty_arrays(n_obs: int) -> PartitionArrays:
    # 8N + 64 leaves >= 2N free after any compaction (live blocks use <= 6N)
    return PartitionArrays(
        slot_of_label=np.arange(n_obs, dtype=np.int64),
        label_of_slot=np.arange(n_obs, dtype=np.int64),
        obs_slot=np.full(n_obs, -1, dtype=np.int64),
        size=np.zeros(n_obs, dtype=np.int64),
        offset=np.zeros(n_obs, dtype=np.int64),
        cap=np.zeros(n_obs, dtype=np.int64),
        pool=np.full(8 * n_obs + 64, -1, dtype=np.int64),
        meta=np.zeros(2, dtype=np.int64),
    )


@njit(cache=True)
def _compact(p):
    n_slots = p.size.shape[0]
    live = 0
    for slot in range(n_slots):
        live += p.size[slot]
    tmp = np.empty(live, dtype=np.int64)
    pos = 0
    for slot in range(n_slots):
        n = p.size[slot]
        off = p.offset[slot]
        for j in range(n):
            tmp[pos + j] = p.pool[off + j]
        pos += n
    top = 0
    pos = 0
    for slot in range(n_slots):
        n = p.size[slot]
        c = max(2 * n, 4) if n > 0 else 0
        p.offset[slot] = top
        p.cap[slot] = c
        for j in range(n):
            p.pool[top + j] = tmp[pos + j]
        pos += n
        top += c
    p.meta[1] = top


@njit(cache=True)
def _grow(p, slot):
    new_cap = max(2 * p.cap[slot], 4)
    if p.meta[1] + new_cap > p.pool.shape[0]:
        _compact(p)
        if p.cap[slot] > p.size[slot]:
            return
        new_cap = max(2 * p.cap[slot], 4)
    n = p.size[slot]
    old = p.offset[slot]
    new = p.meta[1]
    for j in range(n):
        p.pool[new + j] = p.pool[old + j]
    p.offset[slot] = new
    p.cap[slot] = new_cap
    p.meta[1] = new + new_cap


@njit(cache=True)
def remove_at(p, r, idx):
    """Detach the ``idx``-th member of component ``r``; return (obs, deleted)."""
    slot = p.slot_of_label[r]
    n = p.size[slot]
    off = p.offset[slot]
    i = p.pool[off + idx]
    p.pool[off + idx] = p.pool[off + n - 1]
    p.size[slot] = n - 1
    p.obs_slot[i] = -1
    if n > 1:
        return i, False
    last = p.meta[0] - 1
    if r != last:
        other = p.slot_of_label[last]
        p.slot_of_label[r] = other
        p.label_of_slot[other] = r
        p.slot_of_label[last] = slot
        p.label_of_slot[slot] = last
    p.meta[0] = last
    return i, True


@njit(cache=True)
def insert_at(p, i, s):
    """Append observation ``i`` to component ``s``; ``s == k`` opens a new one."""
    if s == p.meta[0]:
        p.meta[0] += 1
    slot = p.slot_of_label[s]
    n = p.size[slot]
    if n == p.cap[slot]:
        _grow(p, slot)
    p.pool[p.offset[slot] + n] = i
    p.size[slot] = n + 1
    p.obs_slot[i] = slot


@njit(cache=True)
def labels_of(p, out):
    for i in range(p.obs_slot.shape[0]):
        out[i] = p.label_of_slot[p.obs_slot[i]]


@njit(cache=True)
def _load(p, z):
    # z: 0-based labels with no gaps
    n_obs = z.shape[0]
    k = 0
    for i in range(n_obs):
        if z[i] + 1 > k:
            k = z[i] + 1
    for i in range(n_obs):
        p.size[z[i]] += 1
    top = 0
    for slot in range(n_obs):
        p.offset[slot] = top
        n = p.size[slot]
        p.cap[slot] = n + max(n, 4) if n > 0 else 0
        top += p.cap[slot]
        p.size[slot] = 0
    p.meta[1] = top
    for i in range(n_obs):
        slot = z[i]
        p.pool[p.offset[slot] + p.size[slot]] = i
        p.size[slot] += 1
        p.obs_slot[i] = slot
    p.meta[0] = k


class PartitionState:
    """The sampled pair (k, z).

    Public methods use 1-based component labels and 0-based observation ids.
    ``arrays`` exposes the raw storage shared with the compiled sampler.
    """

    def __init__(self, n_obs: int, labels=None):
        if n_obs < 1:
            raise ValueError("a partition needs at least one observation")
        self.arrays = _empty_arrays(n_obs)
        if labels is None:
            labels = np.zeros(n_obs, dtype=np.int64)
        else:
            labels = _canonical_zero_based(np.asarray(labels), n_obs)
        _load(self.arrays, labels)

    @classmethod
    def from_members(cls, members) -> "PartitionState":
        """Build from a list of member lists; list position gives the label."""
        n_obs = sum(len(m) for m in members)
        z = np.full(n_obs, -1, dtype=np.int64)
        for r, group in enumerate(members):
            if len(group) == 0:
                raise ValueError("empty components are not allowed")
            for i in group:
                if not 0 <= i < n_obs or z[i] != -1:
                    raise ValueError(f"bad or repeated observation id {i}")
                z[i] = r
        state = cls(n_obs)
        state.arrays.size[:] = 0
        state.arrays.obs_slot[:] = -1
        state.arrays.pool[:] = -1
        _load_exact(state.arrays, members)
        return state

    @property
    def n_obs(self) -> int:
        return self.arrays.obs_slot.shape[0]

    @property
    def k(self) -> int:
        return int(self.arrays.meta[0])

    def sizes(self) -> np.ndarray:
        p = self.arrays
        return p.size[p.slot_of_label[: self.k]].copy()

    def members(self) -> list[list[int]]:
        """Member ids per component, in storage order (label 1 first)."""
        p = self.arrays
        out = []
        for r in range(self.k):
            slot = p.slot_of_label[r]
            off = p.offset[slot]
            out.append(p.pool[off : off + p.size[slot]].tolist())
        return out

    def assignment(self) -> np.ndarray:
        """1-based label of every observation."""
        out = np.empty(self.n_obs, dtype=np.int64)
        labels_of(self.arrays, out)
        return out + 1

    def set_partition(self) -> frozenset:
        return frozenset(frozenset(m) for m in self.members())

    def remove_member(self, r: int, idx: int) -> tuple[int, bool]:
        """Detach member ``idx`` of component ``r`` (1-based).

        The hole is filled with the component's last member.  An emptied
        component is deleted and component k takes over label ``r``.
        Returns the detached observation id and whether a deletion happened.
        """
        k = self.k
        if not 1 <= r <= k:
            raise IndexError(f"component {r} outside 1..{k}")
        n = int(self.arrays.size[self.arrays.slot_of_label[r - 1]])
        if not 0 <= idx < n:
            raise IndexError(f"member index {idx} outside 0..{n - 1}")
        i, deleted = remove_at(self.arrays, r - 1, idx)
        return int(i), bool(deleted)

    def insert_member(self, i: int, s: int) -> None:
        """Place detached observation ``i`` in component ``s`` (``k + 1`` = new)."""
        k = self.k
        if not 0 <= i < self.n_obs:
            raise IndexError(f"observation {i} outside 0..{self.n_obs - 1}")
        if self.arrays.obs_slot[i] != -1:
            raise ValueError(f"observation {i} is already assigned")
        if not 1 <= s <= k + 1:
            raise IndexError(f"target component {s} outside 1..{k + 1}")
        insert_at(self.arrays, i, s - 1)

    def audit(self, allow_detached: int = 0) -> None:
        """Full consistency check, O(N + pool).  Raises :class:`InvariantError`.

        ``allow_detached`` tolerates that many unassigned observations, for
        checks made between a remove and the matching insert.
        """
        p = self.arrays
        n_obs, k = self.n_obs, self.k
        # k = 0 is legitimate only while the sole observation is detached
        lowest = 0 if allow_detached >= n_obs else 1
        if not lowest <= k <= n_obs:
            raise InvariantError(f"k={k} outside {lowest}..{n_obs}")
        if sorted(p.slot_of_label.tolist()) != list(range(n_obs)):
            raise InvariantError("slot table is not a permutation")
        if np.any(p.label_of_slot[p.slot_of_label] != np.arange(n_obs)):
            raise InvariantError("label/slot tables disagree")
        seen = np.zeros(n_obs, dtype=np.int64)
        blocks = []
        for r in range(n_obs):
            slot = p.slot_of_label[r]
            n = p.size[slot]
            if r < k and n < 1:
                raise InvariantError(f"component {r + 1} is empty")
            if r >= k and n != 0:
                raise InvariantError(f"label {r + 1} > k holds members")
            if n > p.cap[slot]:
                raise InvariantError(f"slot {slot} overflows its block")
            if p.cap[slot] > 0:
                blocks.append((p.offset[slot], p.offset[slot] + p.cap[slot]))
            for i in p.pool[p.offset[slot] : p.offset[slot] + n]:
                seen[i] += 1
                if p.obs_slot[i] != slot:
                    raise InvariantError(f"obs {i} listed in slot {slot} but assigned elsewhere")
        if np.any(seen > 1):
            raise InvariantError("observation listed twice")
        detached = int(np.sum(seen == 0))
        if detached > allow_detached or np.any(p.obs_slot[seen == 0] != -1):
            raise InvariantError(f"{detached} observations missing from member lists")
        blocks.sort()
        for (a0, a1), (b0, _) in zip(blocks, blocks[1:]):
            if b0 < a1:
                raise InvariantError("member blocks overlap")
        if blocks and blocks[-1][1] > p.meta[1]:
            raise InvariantError("block beyond pool top")

    def copy(self) -> "PartitionState":
        new = object.__new__(PartitionState)
        new.arrays = PartitionArrays(*(a.copy() for a in self.arrays))
        return new

    def __repr__(self) -> str:
        return f"PartitionState(k={self.k}, members={self.members()})"


def _load_exact(p, members) -> None:
    top = 0
    for r, group in enumerate(members):
        n = len(group)
        p.offset[r] = top
        p.cap[r] = n + max(n, 4)
        p.pool[top : top + n] = group
        p.size[r] = n
        p.obs_slot[list(group)] = r
        top += p.cap[r]
    for r in range(len(members), p.size.shape[0]):
        p.offset[r] = top
        p.cap[r] = 0
    p.meta[0] = len(members)
    p.meta[1] = top


def _canonical_zero_based(labels: np.ndarray, n_obs: int) -> np.ndarray:
    if labels.shape != (n_obs,):
        raise ValueError(f"expected {n_obs} labels, got shape {labels.shape}")
    _, z = np.unique(labels, return_inverse=True)
    return z.astype(np.int64)
