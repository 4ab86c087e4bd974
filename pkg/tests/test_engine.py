"""End-to-end job execution on the simulated network."""

from fractions import Fraction

import pytest

from dualmarket.engine import Engine
from dualmarket.errors import Deadlock, TrustedWorkerFault
from dualmarket.ledger import CASH
from dualmarket.model_split import ModelSpec
from dualmarket.simnet import FaultKind, FaultSpec, LatencyModel, SimNet

from helpers import accepted_db, curators, fresh_stack

OVERHEAD = Fraction(17666, 100)


def _build(n_workers=8, price=101, tmr=False, cuts=(), epochs=2, seed=7):
    """Deterministic stack: same args, same ids, same group sampling."""
    ledger, assoc, market, treasury, escrow = fresh_stack(seed=seed)
    vs = curators(ledger, 6)
    initiator = ledger.create_account()
    db = accepted_db(ledger, assoc, initiator, vs, entries=1, shards_per_entry=10)
    owner = ledger.create_account()
    wids = [market.register_worker(owner, False, Fraction(1))
            for _ in range(n_workers)]
    user = ledger.create_account()
    ledger.mint(CASH, user, 100_000)
    spec = ModelSpec(layer_dims=(6, 8, 4), init_seed=1, learning_rate=0.01)
    jid = market.submit_job(
        user, db, spec, epochs=epochs, batch_size=4, price=price, tmr=tmr,
        cut_points=list(cuts), epsilon=Fraction(1, 2), rho=Fraction(1, 2),
        seed=seed,
    )
    net = SimNet(LatencyModel())
    engine = Engine(ledger, market, net, run_seed=seed)
    return ledger, market, net, engine, jid, wids, user


def _run(**kw):
    ledger, market, net, engine, jid, wids, user = _build(**kw)
    run = engine.start_job(jid, [])
    net.run_until_idle()
    engine.ensure_all_done()
    return ledger, market, engine, run, wids, user


def _run_with_faults(faults, **kw):
    ledger, market, net, engine, jid, wids, user = _build(**kw)
    run = engine.start_job(jid, faults)
    net.run_until_idle()
    engine.ensure_all_done()
    return ledger, market, engine, run, wids, user


def _kinds(engine):
    return [e["kind"] for e in engine.events]


def test_baseline_run_timing_pinned():
    # 2-layer model, one segment, rate 1: each direction costs 500 ms per
    # batch, so 1000 ms x 10 shards x 2 epochs = 20 s of compute exactly
    ledger, market, engine, run, wids, user = _run()
    assert run.status == "verified"
    assert run.accounting.compute_ms == Fraction(20_000)
    assert run.accounting.scheduling_ms == 2 * OVERHEAD  # one per epoch
    assert run.accounting.work_units == Fraction(20)
    assert run.overhead_factor == Fraction(1)
    assert run.divergences == 0
    assert sorted(run.epoch_digests) == [0, 1]
    assert sum(run.work_by_worker.values()) == Fraction(20)
    # two rotation workers, five shards each, both epochs
    assert sorted(run.work_by_worker.values()) == [Fraction(10), Fraction(10)]
    assert run.tracker.max_exposure() <= run.schedule.cap == 5
    assert ledger.verify_chain()


def test_event_stream_fully_deterministic():
    def events():
        _, _, engine, _, _, _ = _run()
        return engine.events

    a, b = events(), events()
    assert a == b
    assert [e["kind"] for e in a][0] == "job_scheduled"
    assert [e["kind"] for e in a][-1] == "job_settled"


def test_tmr_triples_work_not_results():
    _, _, _, plain, _, _ = _run(tmr=False)
    _, market, engine, tmr, _, _ = _run(tmr=True)
    assert tmr.status == "verified"
    assert tmr.accounting.work_units == Fraction(60)
    assert tmr.overhead_factor == Fraction(3)
    # redundancy changes cost only; the verified digests are identical
    assert tmr.epoch_digests == plain.epoch_digests
    ev = [e for e in engine.events if e["kind"] == "epoch_verified"]
    assert [e["epoch"] for e in ev] == [0, 1]
    assert all(len(e["groups"]) == 3 for e in ev)


def test_split_pipeline_matches_monolithic_digests():
    _, _, _, mono, _, _ = _run(cuts=())
    _, _, _, split, _, _ = _run(cuts=(1,))
    assert split.status == "verified"
    assert split.job.n_segments == 2
    assert split.epoch_digests == mono.epoch_digests
    # same model work, now spread across two workers per group
    assert sum(split.work_by_worker.values()) == Fraction(20)
    assert len(split.work_by_worker) == 3


def test_trusted_worker_cannot_be_faulted():
    ledger, market, net, engine, jid, wids, user = _build()
    owner = ledger.create_account()
    t1 = market.register_worker(owner, True, Fraction(4))
    with pytest.raises(TrustedWorkerFault):
        engine.start_job(jid, [FaultSpec(t1, FaultKind.CRASH, 0, 0)])


def test_one_fault_per_worker():
    ledger, market, net, engine, jid, wids, user = _build()
    with pytest.raises(ValueError, match="one fault per worker"):
        engine.start_job(jid, [
            FaultSpec(wids[0], FaultKind.CRASH, 0, 0),
            FaultSpec(wids[0], FaultKind.EXFILTRATE, 1, 0),
        ])


def test_fault_trigger_beyond_horizon_never_fires():
    faults = [FaultSpec(w, FaultKind.CORRUPT_RESULT, 99, 0)
              for w in _build()[5][:1]]
    ledger, market, engine, run, wids, user = _run_with_faults(faults)
    assert run.status == "verified"
    assert run.divergences == 0
    assert not run.fired_faults
    assert "fault_fired" not in _kinds(engine)


def _discover_rotation_worker(group=0, **kw):
    """Clean run with the same construction, to learn the sampled roster."""
    _, _, _, run, _, _ = _run(**kw)
    return run.schedule.groups[group].rotation[0], run


def test_corrupt_result_divergence_recovery():
    bad, clean = _discover_rotation_worker(tmr=True)
    faults = [FaultSpec(bad, FaultKind.CORRUPT_RESULT, 1, 0)]
    ledger, market, engine, run, wids, user = _run_with_faults(faults, tmr=True)
    assert run.status == "verified"
    assert run.divergences == 1
    kinds = _kinds(engine)
    for expected in ("fault_fired", "divergence", "blacklist",
                     "group_replaced", "job_settled"):
        assert expected in kinds
    (div,) = [e for e in engine.events if e["kind"] == "divergence"]
    assert div["epoch"] == 1 and div["minority_groups"] == [0]
    (rep,) = [e for e in engine.events if e["kind"] == "group_replaced"]
    (sched,) = [e for e in engine.events if e["kind"] == "job_scheduled"]
    original = {w for g in sched["groups"] for w in g}
    assert set(rep["workers"]).isdisjoint(original)
    # recovery reproduces the clean result bit for bit
    assert run.epoch_digests == clean.epoch_digests
    # the corrupt group is unpaid and blacklisted
    record = market.settlements[run.job.job_id]
    bad_group = set(sched["groups"][0])
    assert bad in bad_group
    assert bad_group.isdisjoint(record.worker_payments)
    for w in bad_group:
        assert market.workers[w].status.value == "blacklisted"
    assert record.conserved_against(run.job.price)


def test_corrupt_without_redundancy_goes_undetected():
    bad, _ = _discover_rotation_worker(tmr=False)
    faults = [FaultSpec(bad, FaultKind.CORRUPT_RESULT, 0, 0)]
    ledger, market, engine, run, wids, user = _run_with_faults(faults)
    # a single corrupted group still produces one digest; with no peer to
    # disagree, unanimity holds and the wrong result would be accepted.
    # That is exactly the case redundancy exists for.
    assert run.status == "verified"
    assert run.divergences == 0


def test_crash_times_out_and_refunds():
    bad, _ = _discover_rotation_worker(tmr=False)
    faults = [FaultSpec(bad, FaultKind.CRASH, 0, 1)]
    ledger, market, engine, run, wids, user = _run_with_faults(faults)
    assert run.status == "failed"
    kinds = _kinds(engine)
    assert "worker_crashed" in kinds
    assert "epoch_timeout" in kinds
    assert "divergence" in kinds
    record = market.settlements[run.job.job_id]
    assert record.refund == run.job.price
    assert ledger.balance(user, CASH) == 100_000  # made whole
    assert run.end_ms > run.start_ms


def test_crash_under_tmr_recovers():
    bad, clean = _discover_rotation_worker(tmr=True)
    faults = [FaultSpec(bad, FaultKind.CRASH, 0, 1)]
    ledger, market, engine, run, wids, user = _run_with_faults(faults, tmr=True)
    assert run.status == "verified"
    assert run.epoch_digests == clean.epoch_digests
    kinds = _kinds(engine)
    assert "epoch_timeout" in kinds and "group_replaced" in kinds


def test_exfiltrate_is_logged_and_bounded():
    bad, _ = _discover_rotation_worker(tmr=False)
    faults = [FaultSpec(bad, FaultKind.EXFILTRATE, 0, 1)]
    ledger, market, engine, run, wids, user = _run_with_faults(faults)
    # exfiltration does not touch the numbers: training verifies
    assert run.status == "verified"
    assert run.divergences == 0
    (leak,) = [e for e in engine.events if e["kind"] == "exfiltrate_log"]
    assert leak["worker"] == bad
    assert leak["count"] == len(leak["shards"]) <= leak["cap"] == 5
    assert leak["shards"] == sorted(leak["shards"])


def test_pool_exhaustion_fails_job():
    # tmr needs 6 workers; with exactly 6 there is nobody left to replace a
    # blacklisted group
    bad, _ = _discover_rotation_worker(tmr=True, n_workers=6)
    faults = [FaultSpec(bad, FaultKind.CORRUPT_RESULT, 0, 0)]
    ledger, market, engine, run, wids, user = _run_with_faults(
        faults, tmr=True, n_workers=6
    )
    assert run.status == "failed"
    assert "pool_exhausted" in _kinds(engine)
    assert market.settlements[run.job.job_id].refund == run.job.price
    assert ledger.balance(user, CASH) == 100_000


def test_ensure_all_done_flags_undrained_jobs():
    ledger, market, net, engine, jid, wids, user = _build()
    engine.start_job(jid, [])
    with pytest.raises(Deadlock):
        engine.ensure_all_done()
    net.run_until_idle()
    engine.ensure_all_done()


def test_workers_released_after_verified_job():
    ledger, market, engine, run, wids, user = _run()
    busy = [w for w in wids if market.workers[w].status.value == "busy"]
    assert busy == []
