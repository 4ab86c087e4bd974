"""Worker registry, job intake, task decomposition, and settlement.

The trusted scheduler decomposes a job onto redundancy groups and model
segments. Group sampling is uniform without replacement from the eligible
untrusted pool. Each group holds one rotation roster for the first segment
(the workers that touch raw shards, sized so the exposure cap still covers
the whole dataset) plus one fixed worker per later segment (those only ever
see boundary activations).

Feasibility: with cap = floor(epsilon * total_shards), covering all shards
needs at least ceil(total_shards / cap) first-segment workers per group,
plus (segments - 1) fixed workers, times the number of groups.

Work accounting: forward+backward on one batch through the full model is
one work-unit; a segment's share is its layer count over the total. Pay is
proportional to work-units, not wall-clock, so a slow or stalling worker
cannot inflate its share.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from fractions import Fraction

from . import canon
from .data_market import DataAssociation
from .errors import (
    AlreadySettled,
    EmptyDatabase,
    InfeasibleSchedule,
    InsufficientBalance,
    UnknownJob,
    UnknownWorker,
)
from .ledger import CASH, AccountId, Ledger
from .model_split import ModelSpec, validate_cut_points
from .verification import exposure_cap, initial_block_plan


class WorkerStatus(enum.Enum):
    IDLE = "idle"
    BUSY = "busy"
    BLACKLISTED = "blacklisted"


@dataclass
class Worker:
    worker_id: str
    owner: AccountId
    trusted: bool
    compute_rate: Fraction  # work-units per simulated second
    status: WorkerStatus = WorkerStatus.IDLE


@dataclass
class Job:
    job_id: int
    user: AccountId
    database_id: int
    model_spec: ModelSpec
    epochs: int
    batch_size: int
    price: int
    tmr: bool
    cut_points: list[int]
    epsilon: Fraction = Fraction(1, 20)
    rho: Fraction = Fraction(1, 2)
    total_shards: int = 0
    seed: int = 0

    @property
    def n_groups(self) -> int:
        return 3 if self.tmr else 1

    @property
    def n_segments(self) -> int:
        return len(self.cut_points) + 1

    @property
    def slots_per_step(self) -> int:
        """Worker slots occupied while one batch is in flight."""
        return self.n_groups * self.n_segments


@dataclass(frozen=True)
class TaskAssignment:
    job_id: int
    group_index: int
    segment_index: int
    worker_id: str
    shard_ids: tuple[int, ...]


@dataclass
class GroupPlan:
    """One redundancy group's rosters for a job."""

    group_index: int
    rotation: list[str]  # first-segment workers, roster order
    fixed: list[str]  # one worker per segment 1..S-1

    @property
    def workers(self) -> list[str]:
        return [*self.rotation, *self.fixed]

    def segment_worker(self, segment_index: int, shard_owner: str) -> str:
        if segment_index == 0:
            return shard_owner
        return self.fixed[segment_index - 1]


@dataclass
class Schedule:
    job_id: int
    cap: int
    groups: list[GroupPlan]
    assignments: list[TaskAssignment]
    epoch0_plan: dict[int, dict[int, str]] = field(default_factory=dict)


@dataclass
class SettlementRecord:
    job_id: int
    verified: bool
    dividends: dict[AccountId, int]
    worker_payments: dict[str, int]
    treasury: int
    refund: int

    def conserved_against(self, price: int) -> bool:
        return (
            sum(self.dividends.values())
            + sum(self.worker_payments.values())
            + self.treasury
            + self.refund
            == price
        )


def group_size_needed(total_shards: int, cap: int, n_segments: int) -> int:
    """Minimum workers per group: shard coverage plus fixed segment slots."""
    if cap < 1:
        raise InfeasibleSchedule("exposure cap rounds down to zero shards")
    rotation = -(-total_shards // cap)  # ceil
    return rotation + (n_segments - 1)


class ComputeMarket:
    def __init__(self, ledger: Ledger, association: DataAssociation,
                 treasury: AccountId, escrow: AccountId):
        self.ledger = ledger
        self.association = association
        self.treasury = treasury
        self.escrow = escrow
        self.workers: dict[str, Worker] = {}
        self.worker_order: list[str] = []
        self.jobs: dict[int, Job] = {}
        self.schedules: dict[int, Schedule] = {}
        self.settlements: dict[int, SettlementRecord] = {}
        self._next_job_id = 1
        self._n_workers = 0

    # -- workers ------------------------------------------------------------

    def register_worker(
        self, owner: AccountId, trusted: bool, compute_rate: Fraction
    ) -> str:
        self.ledger._require_account(owner)
        rate = Fraction(compute_rate)
        if rate <= 0:
            raise ValueError("compute_rate must be positive")
        ordinal = self._n_workers
        self._n_workers += 1
        worker_id = canon.digest(
            ("worker", self.ledger.run_seed, ordinal)
        ).hex()[:16]
        self.workers[worker_id] = Worker(worker_id, owner, bool(trusted), rate)
        self.worker_order.append(worker_id)
        return worker_id

    def worker(self, worker_id: str) -> Worker:
        w = self.workers.get(worker_id)
        if w is None:
            raise UnknownWorker(f"no worker {worker_id}")
        return w

    def eligible_untrusted(self, exclude: set[str] = frozenset()) -> list[str]:
        return [
            wid
            for wid in self.worker_order
            if not self.workers[wid].trusted
            and self.workers[wid].status is WorkerStatus.IDLE
            and wid not in exclude
        ]

    def blacklist(self, worker_ids) -> None:
        for wid in worker_ids:
            self.worker(wid).status = WorkerStatus.BLACKLISTED

    def release(self, worker_ids) -> None:
        for wid in worker_ids:
            w = self.worker(wid)
            if w.status is WorkerStatus.BUSY:
                w.status = WorkerStatus.IDLE

    # -- jobs ---------------------------------------------------------------

    def submit_job(
        self,
        user: AccountId,
        database_id: int,
        model_spec: ModelSpec,
        epochs: int,
        batch_size: int,
        price: int,
        tmr: bool,
        cut_points: list[int],
        epsilon: Fraction = Fraction(1, 20),
        rho: Fraction = Fraction(1, 2),
        seed: int = 0,
    ) -> int:
        self.ledger._require_account(user)
        db = self.association._db(database_id)
        if not db.accepted_entries:
            raise EmptyDatabase(f"database {database_id} has no accepted data")
        if epochs < 1:
            raise ValueError("epochs must be >= 1")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if price < 0:
            raise ValueError("price must be non-negative")
        cuts = validate_cut_points(model_spec, cut_points) if cut_points else []
        if self.ledger.balance(user, CASH) < price:
            raise InsufficientBalance(
                f"user holds {self.ledger.balance(user, CASH)}, job costs {price}"
            )
        job_id = self._next_job_id
        self._next_job_id += 1
        job = Job(
            job_id=job_id,
            user=user,
            database_id=database_id,
            model_spec=model_spec,
            epochs=int(epochs),
            batch_size=int(batch_size),
            price=int(price),
            tmr=bool(tmr),
            cut_points=cuts,
            epsilon=Fraction(epsilon),
            rho=Fraction(rho),
            total_shards=db.total_shards,
            seed=int(seed),
        )
        self.ledger.transfer(CASH, user, self.escrow, price)
        self.jobs[job_id] = job
        self.ledger.append_tx(
            ("job", job_id, user, database_id, price, int(epochs), bool(tmr))
        )
        return job_id

    def job(self, job_id: int) -> Job:
        j = self.jobs.get(job_id)
        if j is None:
            raise UnknownJob(f"no job {job_id}")
        return j

    # -- scheduling -----------------------------------------------------------

    def sample_group(
        self, job: Job, rng: random.Random, exclude: set[str]
    ) -> GroupPlan:
        """Draw one group's rosters from the eligible pool."""
        cap = exposure_cap(job.epsilon, job.total_shards)
        need = group_size_needed(job.total_shards, cap, job.n_segments)
        pool = self.eligible_untrusted(exclude)
        if len(pool) < need:
            raise InfeasibleSchedule(
                f"need {need} workers for a group, {len(pool)} eligible"
            )
        chosen = rng.sample(pool, need)
        rotation_n = need - (job.n_segments - 1)
        return GroupPlan(
            group_index=-1,
            rotation=chosen[:rotation_n],
            fixed=chosen[rotation_n:],
        )

    def schedule(self, job_id: int, rng_seed: int) -> Schedule:
        job = self.job(job_id)
        cap = exposure_cap(job.epsilon, job.total_shards)
        need = group_size_needed(job.total_shards, cap, job.n_segments)
        pool = self.eligible_untrusted()
        total_need = job.n_groups * need
        if len(pool) < total_need:
            raise InfeasibleSchedule(
                f"job {job_id} needs {total_need} untrusted workers "
                f"({need} per group x {job.n_groups}), pool has {len(pool)}"
            )
        rng = random.Random(rng_seed)
        chosen = rng.sample(pool, total_need)
        groups: list[GroupPlan] = []
        assignments: list[TaskAssignment] = []
        epoch0: dict[int, dict[int, str]] = {}
        rotation_n = need - (job.n_segments - 1)
        for g in range(job.n_groups):
            part = chosen[g * need : (g + 1) * need]
            plan = GroupPlan(
                group_index=g,
                rotation=part[:rotation_n],
                fixed=part[rotation_n:],
            )
            groups.append(plan)
            block = initial_block_plan(plan.rotation, job.total_shards, cap)
            epoch0[g] = block
            by_worker: dict[str, list[int]] = {w: [] for w in plan.rotation}
            for shard, w in block.items():
                by_worker[w].append(shard)
            for w in plan.rotation:
                assignments.append(
                    TaskAssignment(job_id, g, 0, w, tuple(sorted(by_worker[w])))
                )
            for si, w in enumerate(plan.fixed, start=1):
                assignments.append(TaskAssignment(job_id, g, si, w, ()))
            for w in plan.workers:
                self.workers[w].status = WorkerStatus.BUSY
        sched = Schedule(
            job_id=job_id,
            cap=cap,
            groups=groups,
            assignments=assignments,
            epoch0_plan=epoch0,
        )
        self.schedules[job_id] = sched
        return sched

    # -- settlement ----------------------------------------------------------

    def settle(
        self,
        job_id: int,
        verified: bool,
        work_by_worker: dict[str, Fraction] | None = None,
    ) -> SettlementRecord:
        job = self.job(job_id)
        if job_id in self.settlements:
            raise AlreadySettled(f"job {job_id} already settled")
        if not verified:
            self.ledger.transfer(CASH, self.escrow, job.user, job.price)
            record = SettlementRecord(job_id, False, {}, {}, 0, job.price)
            self.settlements[job_id] = record
            self.ledger.append_tx(("settle", job_id, False, job.price))
            return record
        payouts, treasury_cut, compute_portion = (
            self.association.distribute_dividend(
                job.database_id, job.price, job.rho, payer=self.escrow
            )
        )
        work = {
            w: u for w, u in (work_by_worker or {}).items()
            if u > 0 and self.workers[w].status is not WorkerStatus.BLACKLISTED
        }
        payments: dict[str, int] = {}
        total_units = sum(work.values(), Fraction(0))
        if total_units > 0:
            for wid in sorted(work):
                share = int(Fraction(compute_portion) * work[wid] / total_units)
                payments[wid] = share
                self.ledger.transfer(
                    CASH, self.escrow, self.workers[wid].owner, share
                )
            leftover = compute_portion - sum(payments.values())
        else:
            leftover = compute_portion
        self.ledger.transfer(CASH, self.escrow, self.treasury, leftover)
        record = SettlementRecord(
            job_id, True, payouts, payments, treasury_cut + leftover, 0
        )
        self.settlements[job_id] = record
        self.ledger.append_tx(("settle", job_id, True, job.price))
        return record
