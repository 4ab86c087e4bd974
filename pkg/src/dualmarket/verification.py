"""TMR digest comparison, exposure caps, and periodic reallocation.

Verification is strict unanimity: a result is accepted only when every
redundancy group returns a byte-identical digest. Majority voting was
considered and rejected; with deterministic honest computation any honest
pair already agrees, so a single dissenting digest is proof of a fault, and
accepting 2-of-3 would hand a corrupted result to the user whenever two
groups happened to share a fault. Divergence names the groups that differ
from the modal digest; with three distinct digests there is no modal value
and all three are named.

Exposure accounting: a worker "sees" a shard when it is assigned raw
training data for it. Only first-segment assignments carry raw data; later
segments receive boundary activations, which is the point of splitting.
The cap is floor(epsilon * total_shards), cumulative per (job, worker).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from . import canon
from .errors import ExposureExceeded, InfeasibleSchedule, MismatchedJob


@dataclass(frozen=True)
class ResultDigest:
    job_id: int
    group_index: int
    epoch: int
    digest: bytes


@dataclass(frozen=True)
class Accepted:
    digest: bytes


@dataclass(frozen=True)
class Divergence:
    groups: frozenset[int]


def resolve_digests(
    job_id: int, epoch: int, by_group: dict[int, bytes | None]
) -> Accepted | Divergence:
    """Unanimity check over any number of groups; None means no result.

    A missing digest (crash, timeout) can never be part of unanimity, so
    its group is named divergent. The modal digest is one reported by at
    least two groups; if none exists, every group is named.
    """
    values = [d for d in by_group.values() if d is not None]
    if values and all(d == values[0] for d in values) and len(values) == len(by_group):
        return Accepted(values[0])
    counts: dict[bytes, int] = {}
    for d in values:
        counts[d] = counts.get(d, 0) + 1
    modal = None
    for d, n in counts.items():
        if n >= 2:
            modal = d
            break
    divergent = frozenset(
        g for g, d in by_group.items() if d is None or d != modal
    )
    return Divergence(divergent)


def verify_results(
    d1: ResultDigest, d2: ResultDigest, d3: ResultDigest
) -> Accepted | Divergence:
    """Three-group unanimity comparison for one (job, epoch)."""
    ds = (d1, d2, d3)
    key = (d1.job_id, d1.epoch)
    if any((d.job_id, d.epoch) != key for d in ds):
        raise MismatchedJob("digests reference different jobs or epochs")
    return resolve_digests(d1.job_id, d1.epoch, {d.group_index: d.digest for d in ds})


def exposure_cap(epsilon: Fraction, total_shards: int) -> int:
    """floor(epsilon * total_shards)."""
    cap = int(Fraction(epsilon) * total_shards)
    return cap


@dataclass
class ExposureTracker:
    """Cumulative shards seen per worker for one job."""

    job_id: int
    total_shards: int
    cap: int
    seen: dict[str, set[int]] = field(default_factory=dict)

    def record(self, worker_id: str, shard_ids) -> None:
        cur = self.seen.setdefault(worker_id, set())
        new = cur | set(shard_ids)
        if len(new) > self.cap:
            raise ExposureExceeded(
                f"worker {worker_id} would see {len(new)} shards, cap {self.cap}"
            )
        self.seen[worker_id] = new

    def count(self, worker_id: str) -> int:
        return len(self.seen.get(worker_id, ()))

    def headroom(self, worker_id: str) -> int:
        return self.cap - self.count(worker_id)

    def max_exposure(self) -> int:
        return max((len(s) for s in self.seen.values()), default=0)


def epoch_shard_order(job_seed: int, epoch: int, total_shards: int) -> list[int]:
    """Shard processing order for one epoch, shared by all groups.

    Identical order across groups is what makes honest digests byte-equal;
    the order still changes every epoch so reallocation is exercised.
    """
    seed = int.from_bytes(canon.digest(("order", job_seed, epoch))[:8], "little")
    order = list(range(total_shards))
    random.Random(seed).shuffle(order)
    return order


def initial_block_plan(roster: list[str], total_shards: int, cap: int) -> dict[int, str]:
    """First-epoch plan: contiguous blocks of `cap` shards per roster worker."""
    if cap < 1:
        raise InfeasibleSchedule("exposure cap below one shard")
    if len(roster) * cap < total_shards:
        raise InfeasibleSchedule(
            f"{len(roster)} workers x cap {cap} cannot cover {total_shards} shards"
        )
    return {s: roster[s // cap] for s in range(total_shards)}


def reallocate(
    tracker: ExposureTracker,
    roster: list[str],
    epoch_order: list[int],
) -> dict[int, str]:
    """Shard -> worker plan for the next period, honoring the cap.

    Deterministic given the tracker state and roster order. For each shard
    in epoch order, prefer a worker that has already seen it (zero marginal
    exposure), else one with headroom; ties go to the worker with the
    fewest shards assigned this epoch, then roster position. A shard's
    previous owner always qualifies, so coverage cannot fail while the
    roster is intact.
    """
    assigned: dict[str, int] = {w: 0 for w in roster}
    plan: dict[int, str] = {}
    for shard in epoch_order:
        best = None
        best_key = None
        for pos, w in enumerate(roster):
            seen = shard in tracker.seen.get(w, ())
            if not seen and tracker.headroom(w) < 1:
                continue
            key = (0 if seen else 1, assigned[w], pos)
            if best_key is None or key < best_key:
                best, best_key = w, key
        if best is None:
            raise InfeasibleSchedule(
                f"no worker can take shard {shard} under cap {tracker.cap}"
            )
        plan[shard] = best
        assigned[best] += 1
        tracker.record(best, [shard])
    return plan
