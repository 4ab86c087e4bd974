"""Job execution: redundancy groups, split training, verification, recovery.

The trusted scheduler is the only endpoint that sees everything. Per epoch
it plans shard-to-worker assignments (recording exposure), ships raw shard
data to first-segment workers and parameters to fresh workers, and waits
for every group's per-segment parameter uploads. A group's digest is the
hash of its uploaded canonical parameter bytes, so verification is byte
equality and the scheduler always holds a verified checkpoint to restart
from.

Timing model: each group runs a synchronous pipeline, one batch in flight.
A batch walks the segment chain forward (compute, then one activation
message per cut) and backward (compute, then one gradient message per
cut); half of a segment's work is charged to each direction. Rotating the
first segment between shard owners costs a parameter handoff message.
Event times are exact rationals, and the numeric work of a (group, epoch)
is a pure function of its inputs, so the whole run is replay-stable.

Fault semantics:
  * corrupt_result: at the worker's first compute at or after the trigger,
    +1.0 lands on the first weight of its held segment. Training carries
    the corruption into the epoch digest, which breaks unanimity.
  * crash: the worker stops at the trigger; its group's pipeline stalls and
    the scheduler times the group out after a 10-step grace margin.
  * exfiltrate: the worker dumps the shard ids it has seen into the run
    log. The interesting part is the audit trail: the dump can never
    exceed the exposure cap.

Recovery discards the divergent epoch, blacklists every worker in the
minority groups, samples replacement groups, restores them from the last
verified checkpoint, and re-runs the epoch; honest groups' uploads for the
epoch are reused rather than recomputed (they are deterministic). If all
groups diverge or the pool runs dry, the job fails and the user is
refunded.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from fractions import Fraction

from . import canon
from .compute_market import (
    ComputeMarket,
    GroupPlan,
    Job,
    Schedule,
    WorkerStatus,
)
from .errors import Deadlock, InfeasibleSchedule, TrustedWorkerFault
from .ledger import Ledger
from .model_split import (
    Segment,
    init_model,
    loss_and_grad,
    make_shards,
    params_from_canonical_chunks,
    split_model,
)
from .simnet import FaultKind, FaultSpec, JobAccounting, MsgKind, SimNet
from .verification import (
    Accepted,
    Divergence,
    ExposureTracker,
    epoch_shard_order,
    initial_block_plan,
    reallocate,
    resolve_digests,
)

SCHEDULER = "scheduler"
CRASH_MARGIN_STEPS = 10


@dataclass
class GroupState:
    plan: GroupPlan
    segments: list[Segment]
    holder0: str  # current holder of the first segment's parameters
    alive: bool = True
    shipped: dict[str, set[int]] = field(default_factory=dict)

    def segment_worker(self, segment_index: int) -> str:
        if segment_index == 0:
            return self.holder0
        return self.plan.fixed[segment_index - 1]


@dataclass
class EpochWait:
    epoch: int
    expected_groups: set[int]
    # group -> per-layer canonical byte chunks, ascending layer order
    payloads: dict[int, list[bytes]] = field(default_factory=dict)
    resolved: bool = False


@dataclass
class JobRun:
    job: Job
    schedule: Schedule
    shards: list  # list of (x, y) mini-batches
    tracker: ExposureTracker
    rng: random.Random
    groups: dict[int, GroupState] = field(default_factory=dict)
    epoch: int = 0
    wait: EpochWait | None = None
    checkpoints: dict[int, list[bytes]] = field(default_factory=dict)
    accounting: JobAccounting = field(default_factory=JobAccounting)
    work_by_worker: dict[str, Fraction] = field(default_factory=dict)
    faults: dict[str, FaultSpec] = field(default_factory=dict)
    fired_faults: set[str] = field(default_factory=set)
    status: str = "running"  # running | verified | failed
    divergences: int = 0
    epoch_digests: dict[int, str] = field(default_factory=dict)
    start_ms: Fraction = Fraction(0)
    end_ms: Fraction = Fraction(0)

    @property
    def overhead_factor(self) -> Fraction:
        baseline = Fraction(self.job.epochs * self.job.total_shards)
        if baseline == 0:
            return Fraction(0)
        return self.accounting.work_units / baseline


class Engine:
    """Runs submitted jobs to completion on the simulated network."""

    def __init__(
        self, ledger: Ledger, market: ComputeMarket, net: SimNet, run_seed: int
    ):
        self.ledger = ledger
        self.market = market
        self.net = net
        self.run_seed = int(run_seed)
        self.events: list[dict] = []
        self.runs: dict[int, JobRun] = {}
        net.register(SCHEDULER)

    # -- logging ----------------------------------------------------------

    def log(self, kind: str, **fields) -> None:
        self.events.append({"t": str(self.net.now), "kind": kind, **fields})

    # -- job lifecycle -------------------------------------------------------

    def start_job(self, job_id: int, faults: list[FaultSpec] = ()) -> JobRun:
        job = self.market.job(job_id)
        for fs in faults:
            w = self.market.worker(fs.worker_id)
            if w.trusted:
                raise TrustedWorkerFault(
                    "trusted workers are axiomatically honest"
                )
        rng_seed = _derive_seed("job-rng", self.run_seed, job_id)
        schedule = self.market.schedule(job_id, rng_seed)
        data_seed = _derive_seed("job-data", self.run_seed, job_id)
        spec = job.model_spec
        shards = make_shards(
            data_seed,
            job.total_shards,
            job.batch_size,
            spec.layer_dims[0],
            spec.layer_dims[-1],
        )
        run = JobRun(
            job=job,
            schedule=schedule,
            shards=shards,
            tracker=ExposureTracker(
                job_id=job_id, total_shards=job.total_shards, cap=schedule.cap
            ),
            rng=random.Random(rng_seed),
            start_ms=self.net.now,
        )
        self.runs[job_id] = run
        for fs in faults:
            if fs.worker_id in run.faults:
                raise ValueError("at most one fault per worker per run")
            run.faults[fs.worker_id] = fs
        for plan in schedule.groups:
            for w in plan.workers:
                self.net.register(w)
        base_params = init_model(spec)
        for plan in schedule.groups:
            run.groups[plan.group_index] = GroupState(
                plan=plan,
                segments=split_model(spec, base_params, job.cut_points),
                holder0=plan.rotation[0],
            )
        self.log(
            "job_scheduled",
            job_id=job_id,
            groups=[list(p.workers) for p in schedule.groups],
            cap=schedule.cap,
            total_shards=job.total_shards,
            slots_per_step=job.slots_per_step,
        )
        self._start_epoch(run, 0)
        return run

    # -- epoch planning ----------------------------------------------------------

    def _start_epoch(self, run: JobRun, epoch: int) -> None:
        """One scheduling run: plan every live group's epoch and launch it."""
        job = run.job
        run.accounting.scheduling_ms += self.net.latency.sgx_scheduling_overhead_ms
        t_plan = self.net.now + self.net.latency.sgx_scheduling_overhead_ms
        run.epoch = epoch
        order = epoch_shard_order(job.seed, epoch, job.total_shards)
        live = sorted(g for g, st in run.groups.items() if st.alive)
        wait = EpochWait(epoch=epoch, expected_groups=set(live))
        run.wait = wait
        deadline = t_plan
        max_batch = Fraction(0)
        for g in live:
            st = run.groups[g]
            if epoch == 0:
                plan = run.schedule.epoch0_plan[g]
                for shard, w in plan.items():
                    run.tracker.record(w, [shard])
            else:
                plan = reallocate(run.tracker, st.plan.rotation, order)
            arrival, batch_ms = self._run_group_epoch(
                run, g, epoch, order, plan, t_plan, wait, fresh=(epoch == 0)
            )
            deadline = max(deadline, arrival)
            max_batch = max(max_batch, batch_ms)
        self._arm_timeout(run, wait, deadline, max_batch)

    def _arm_timeout(
        self, run: JobRun, wait: EpochWait, deadline: Fraction, max_batch: Fraction
    ) -> None:
        margin = CRASH_MARGIN_STEPS * (max_batch if max_batch else Fraction(1))
        self.net.schedule_at(
            deadline + margin, lambda: self._timeout_probe(run, wait)
        )

    # -- message plumbing -----------------------------------------------------------

    def _emit_send(
        self, src: str, dst: str, kind: MsgKind, size: int, at: Fraction
    ) -> None:
        def do_send() -> None:
            self.net.send(src, dst, kind, None, size, lambda _msg: None)

        self.net.schedule_at(at, do_send)

    def _setup_messages(
        self,
        run: JobRun,
        st: GroupState,
        plan: dict[int, str],
        t_plan: Fraction,
        fresh: bool,
    ) -> Fraction:
        """Ship params, raw shards, and labels; returns the latest arrival."""
        job = run.job
        lat = self.net.latency
        batch = job.batch_size
        d_in = job.model_spec.layer_dims[0]
        d_out = job.model_spec.layer_dims[-1]
        sends: list[tuple[str, MsgKind, int]] = []
        if fresh:
            for seg in st.segments:
                dst = st.segment_worker(seg.index)
                sends.append((dst, MsgKind.PARAMS, _segment_size(seg)))
            if len(st.segments) > 1:
                # labels go out of band to the worker that owns the loss
                sends.append(
                    (
                        st.plan.fixed[-1],
                        MsgKind.DATA,
                        job.total_shards * batch * d_out * 8,
                    )
                )
        row_bytes = batch * d_in * 8
        if len(st.segments) == 1:
            row_bytes += batch * d_out * 8  # unsplit: labels ride along
        per_worker_new: dict[str, int] = {}
        for shard in sorted(plan):
            w = plan[shard]
            have = st.shipped.setdefault(w, set())
            if shard not in have:
                have.add(shard)
                per_worker_new[w] = per_worker_new.get(w, 0) + 1
        for w in sorted(per_worker_new):
            sends.append((w, MsgKind.DATA, per_worker_new[w] * row_bytes))
        sends.append((st.holder0, MsgKind.CONTROL, 64))
        latest = t_plan
        for dst, kind, size in sends:
            tr = lat.transit_ms(size)
            run.accounting.comm_ms += tr
            self._emit_send(SCHEDULER, dst, kind, size, t_plan)
            latest = max(latest, t_plan + tr)
        return latest

    # -- the group-epoch pipeline ------------------------------------------------

    def _run_group_epoch(
        self,
        run: JobRun,
        g: int,
        epoch: int,
        order: list[int],
        plan: dict[int, str],
        t_plan: Fraction,
        wait: EpochWait,
        fresh: bool,
    ) -> tuple[Fraction, Fraction]:
        """Execute one group's epoch; returns (digest arrival, max batch ms).

        Numeric work happens eagerly (it is a pure function of segment
        state and shard order); only the timed messages and the digest
        delivery ride the event queue.
        """
        job = run.job
        st = run.groups[g]
        lat = self.net.latency
        spec = job.model_spec
        segs = st.segments
        n_layers = spec.n_layers
        rates = {w: self.market.workers[w].compute_rate for w in st.plan.workers}
        t = self._setup_messages(run, st, plan, t_plan, fresh)
        seg0_size = _segment_size(segs[0])
        act_sizes = [
            job.batch_size * spec.layer_dims[seg.hi] * 8 for seg in segs[:-1]
        ]
        max_batch = Fraction(0)
        crashed_worker: str | None = None
        crash_pos = -1
        for pos, shard in enumerate(order):
            owner = plan[shard]
            batch_start = t
            if owner != st.holder0:
                tr = lat.transit_ms(seg0_size)
                self._emit_send(st.holder0, owner, MsgKind.PARAMS, seg0_size, t)
                run.accounting.comm_ms += tr
                t += tr
                st.holder0 = owner
            chain = [owner, *st.plan.fixed]
            for si, w in enumerate(chain):
                if self._fault_fires(run, w, g, epoch, pos):
                    if run.faults[w].kind is FaultKind.CRASH:
                        crashed_worker = w
                        crash_pos = pos
                    else:
                        self._corrupt(run, g, w, segs[si])
            if crashed_worker is not None:
                break
            x, y = run.shards[shard]
            a = x
            caches = []
            for si, seg in enumerate(segs):
                w = chain[si]
                dur = _compute_ms(seg.n_layers, n_layers, rates[w])
                t += dur
                run.accounting.compute_ms += dur
                run.work_by_worker[w] = run.work_by_worker.get(
                    w, Fraction(0)
                ) + Fraction(seg.n_layers, 2 * n_layers)
                a, cache = seg.forward(a)
                caches.append(cache)
                if si < len(segs) - 1:
                    tr = lat.transit_ms(act_sizes[si])
                    self._emit_send(
                        w, chain[si + 1], MsgKind.ACTIVATION, act_sizes[si], t
                    )
                    run.accounting.comm_ms += tr
                    t += tr
            _loss, grad = loss_and_grad(spec, a, y)
            for si in range(len(segs) - 1, -1, -1):
                seg = segs[si]
                w = chain[si]
                dur = _compute_ms(seg.n_layers, n_layers, rates[w])
                t += dur
                run.accounting.compute_ms += dur
                run.work_by_worker[w] = run.work_by_worker.get(
                    w, Fraction(0)
                ) + Fraction(seg.n_layers, 2 * n_layers)
                grads, grad = seg.backward(caches[si], grad)
                seg.apply_sgd(grads)
                if si > 0:
                    tr = lat.transit_ms(act_sizes[si - 1])
                    self._emit_send(
                        w, chain[si - 1], MsgKind.GRADIENT, act_sizes[si - 1], t
                    )
                    run.accounting.comm_ms += tr
                    t += tr
            run.accounting.work_units += 1
            max_batch = max(max_batch, t - batch_start)
        if crashed_worker is not None:
            self.log(
                "worker_crashed",
                job_id=job.job_id,
                group=g,
                worker=crashed_worker,
                epoch=epoch,
                step=crash_pos,
            )
            # the chain stalls; nothing is uploaded and the probe fires
            return t, max_batch
        # upload per-segment parameter bytes for verification
        payload_by_seg = [_segment_chunks(seg) for seg in segs]
        arrival_last = t
        for si, seg_chunks in enumerate(payload_by_seg):
            w = st.segment_worker(si)
            size = sum(len(c) for c in seg_chunks)
            tr = lat.transit_ms(size)
            run.accounting.comm_ms += tr
            self._emit_send(w, SCHEDULER, MsgKind.DIGEST, size, t)
            arrival_last = max(arrival_last, t + tr)

        def deliver() -> None:
            if wait.resolved:
                return
            wait.payloads[g] = [c for chunks in payload_by_seg for c in chunks]
            if set(wait.payloads) == wait.expected_groups:
                self._verify_epoch(run, wait)

        self.net.schedule_at(arrival_last, deliver)
        return arrival_last, max_batch

    # -- faults ---------------------------------------------------------------

    def _fault_fires(
        self, run: JobRun, worker: str, group: int, epoch: int, pos: int
    ) -> bool:
        fs = run.faults.get(worker)
        if fs is None or worker in run.fired_faults:
            return False
        if (epoch, pos) < (fs.epoch, fs.step):
            return False
        run.fired_faults.add(worker)
        if fs.kind is FaultKind.EXFILTRATE:
            seen = sorted(run.tracker.seen.get(worker, ()))
            self.log(
                "exfiltrate_log",
                job_id=run.job.job_id,
                group=group,
                worker=worker,
                shards=seen,
                count=len(seen),
                cap=run.tracker.cap,
            )
            return False  # computation proceeds untouched
        return True

    def _corrupt(self, run: JobRun, g: int, worker: str, seg: Segment) -> None:
        w, _b = seg.layers[0]
        w.flat[0] += 1.0
        self.log(
            "fault_fired",
            job_id=run.job.job_id,
            group=g,
            worker=worker,
            fault="corrupt_result",
        )

    # -- verification & recovery ----------------------------------------------------

    def _group_digest(self, chunks: list[bytes]) -> bytes:
        h = hashlib.sha256()
        for c in chunks:
            h.update(c)
        return h.digest()

    def _verify_epoch(self, run: JobRun, wait: EpochWait) -> None:
        if wait.resolved:
            return
        wait.resolved = True
        by_group: dict[int, bytes | None] = {
            g: self._group_digest(wait.payloads[g]) if g in wait.payloads else None
            for g in wait.expected_groups
        }
        outcome = resolve_digests(run.job.job_id, wait.epoch, by_group)
        if isinstance(outcome, Accepted):
            good = next(g for g, d in by_group.items() if d == outcome.digest)
            run.checkpoints[wait.epoch] = wait.payloads[good]
            run.epoch_digests[wait.epoch] = outcome.digest.hex()
            self.log(
                "epoch_verified",
                job_id=run.job.job_id,
                epoch=wait.epoch,
                digest=outcome.digest.hex(),
                groups=sorted(by_group),
            )
            if wait.epoch + 1 >= run.job.epochs:
                self._finish_job(run, verified=True)
            else:
                self._start_epoch(run, wait.epoch + 1)
            return
        self._handle_divergence(run, wait, by_group, outcome)

    def _timeout_probe(self, run: JobRun, wait: EpochWait) -> None:
        if wait.resolved or run.status != "running":
            return
        missing = wait.expected_groups - set(wait.payloads)
        if not missing:
            return
        wait.resolved = True
        self.log(
            "epoch_timeout",
            job_id=run.job.job_id,
            epoch=wait.epoch,
            missing_groups=sorted(missing),
        )
        by_group: dict[int, bytes | None] = {
            g: self._group_digest(wait.payloads[g]) if g in wait.payloads else None
            for g in wait.expected_groups
        }
        outcome = resolve_digests(run.job.job_id, wait.epoch, by_group)
        # a missing digest can never satisfy unanimity
        assert isinstance(outcome, Divergence)
        self._handle_divergence(run, wait, by_group, outcome)

    def _handle_divergence(
        self,
        run: JobRun,
        wait: EpochWait,
        by_group: dict[int, bytes | None],
        outcome: Divergence,
    ) -> None:
        run.divergences += 1
        minority = sorted(outcome.groups)
        self.log(
            "divergence",
            job_id=run.job.job_id,
            epoch=wait.epoch,
            minority_groups=minority,
            digests={
                str(g): (d.hex() if d else None)
                for g, d in sorted(by_group.items())
            },
        )
        for g in minority:
            st = run.groups[g]
            self.market.blacklist(st.plan.workers)
            st.alive = False
            self.log(
                "blacklist",
                job_id=run.job.job_id,
                group=g,
                workers=list(st.plan.workers),
            )
        if len(minority) == len(by_group):
            self._finish_job(run, verified=False)
            return
        honest = {
            g: wait.payloads[g] for g in by_group if g not in outcome.groups
        }
        try:
            self._replace_groups(run, wait.epoch, minority, honest)
        except InfeasibleSchedule as exc:
            self.log(
                "pool_exhausted",
                job_id=run.job.job_id,
                epoch=wait.epoch,
                detail=str(exc),
            )
            self._finish_job(run, verified=False)

    def _replace_groups(
        self,
        run: JobRun,
        epoch: int,
        replaced: list[int],
        honest_payloads: dict[int, list[bytes]],
    ) -> None:
        """Re-run `epoch` on fresh groups; honest uploads are reused."""
        job = run.job
        run.accounting.scheduling_ms += self.net.latency.sgx_scheduling_overhead_ms
        t_plan = self.net.now + self.net.latency.sgx_scheduling_overhead_ms
        order = epoch_shard_order(job.seed, epoch, job.total_shards)
        spec = job.model_spec
        if epoch > 0:
            base = params_from_canonical_chunks(
                spec, 0, run.checkpoints[epoch - 1]
            )
        else:
            base = init_model(spec)
        wait = EpochWait(
            epoch=epoch,
            expected_groups=set(honest_payloads) | set(replaced),
        )
        wait.payloads.update(honest_payloads)
        run.wait = wait
        busy = {
            w for st in run.groups.values() if st.alive for w in st.plan.workers
        }
        deadline = t_plan
        max_batch = Fraction(0)
        for g in replaced:
            plan_obj = self.market.sample_group(job, run.rng, exclude=busy)
            plan_obj.group_index = g
            for w in plan_obj.workers:
                self.market.workers[w].status = WorkerStatus.BUSY
                busy.add(w)
                self.net.register(w)
            run.groups[g] = GroupState(
                plan=plan_obj,
                segments=split_model(spec, base, job.cut_points),
                holder0=plan_obj.rotation[0],
            )
            self.log(
                "group_replaced",
                job_id=job.job_id,
                group=g,
                epoch=epoch,
                workers=list(plan_obj.workers),
            )
            block = initial_block_plan(
                plan_obj.rotation, job.total_shards, run.schedule.cap
            )
            for shard, w in block.items():
                run.tracker.record(w, [shard])
            arrival, batch_ms = self._run_group_epoch(
                run, g, epoch, order, block, t_plan, wait, fresh=True
            )
            deadline = max(deadline, arrival)
            max_batch = max(max_batch, batch_ms)
        self._arm_timeout(run, wait, deadline, max_batch)

    # -- completion --------------------------------------------------------------

    def _finish_job(self, run: JobRun, verified: bool) -> None:
        job = run.job
        run.status = "verified" if verified else "failed"
        run.end_ms = self.net.now
        alive_workers = [
            w for st in run.groups.values() if st.alive for w in st.plan.workers
        ]
        record = self.market.settle(
            job.job_id, verified, run.work_by_worker if verified else None
        )
        self.market.release(alive_workers)
        self.log(
            "job_settled",
            job_id=job.job_id,
            verified=verified,
            dividends=dict(sorted(record.dividends.items())),
            worker_payments=dict(sorted(record.worker_payments.items())),
            treasury=record.treasury,
            refund=record.refund,
        )

    def ensure_all_done(self) -> None:
        for job_id, run in self.runs.items():
            if run.status == "running":
                raise Deadlock(f"job {job_id} never reached a terminal state")


def _compute_ms(seg_layers: int, total_layers: int, rate: Fraction) -> Fraction:
    """Half a segment's per-batch work, in simulated ms, at `rate` u/s."""
    return Fraction(1000) * Fraction(seg_layers, total_layers) / (2 * rate)


def _segment_chunks(seg: Segment) -> list[bytes]:
    return [canon.encode(w) + canon.encode(b) for w, b in seg.layers]


def _segment_size(seg: Segment) -> int:
    return sum(len(c) for c in _segment_chunks(seg))


def _derive_seed(tag: str, run_seed: int, job_id: int) -> int:
    return int.from_bytes(canon.digest((tag, run_seed, job_id))[:8], "little")
