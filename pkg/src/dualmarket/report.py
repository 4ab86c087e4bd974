"""Scenario execution and run reports.

`run_scenario` wires a parsed scenario into a fresh ledger, association,
compute market, and simulated network, executes the data-market script and
every job in order, and distills the outcome into a plain-data report dict
(strings, ints, bools, lists, dicts only; rationals rendered as `p/q`).

`render_report` turns that dict into the text the CLI prints: a short
human-readable digest followed by a `=== machine (json) ===` marker and the
canonical JSON (sorted keys, no whitespace). Rendering is a pure function
of the dict, so identical runs print byte-identical reports.

`verify_report` re-checks a report's recorded invariants offline: token
conservation, settlement conservation per job, exposure counts against the
cap, group disjointness, and unanimity bookkeeping. It needs only the
report text, not the run.
"""

from __future__ import annotations

import json
from fractions import Fraction

from .compute_market import ComputeMarket
from .data_market import DataAssociation, DataRequest, ProposalStatus
from .engine import Engine
from .errors import ValidationError
from .ledger import CASH, CURATOR, Ledger
from .model_split import ModelSpec
from .scenario import Scenario
from .simnet import FaultKind, FaultSpec, LatencyModel, SimNet

MACHINE_MARKER = "=== machine (json) ==="
REPORT_FORMAT = 1


def run_scenario(sc: Scenario, name: str = "scenario") -> dict:
    sc.validate()
    ledger = Ledger(run_seed=sc.seed)
    treasury = ledger.create_account()
    escrow = ledger.create_account()
    id_of: dict[str, str] = {}
    name_of: dict[str, str] = {treasury: "treasury", escrow: "escrow"}
    for decl in sc.accounts:
        aid = ledger.create_account()
        id_of[decl.name] = aid
        name_of[aid] = decl.name
        ledger.mint(CASH, aid, decl.cash)
        ledger.mint(CURATOR, aid, decl.curator)
    assoc = DataAssociation(
        ledger, treasury, theta=sc.theta, initiator_endowment=sc.endowment
    )
    market = ComputeMarket(ledger, assoc, treasury, escrow)
    net = SimNet(
        LatencyModel(
            bandwidth=Fraction(sc.bandwidth),
            per_message_fixed_ms=sc.fixed_ms,
            sgx_scheduling_overhead_ms=sc.scheduling_overhead_ms,
        )
    )
    engine = Engine(ledger, market, net, run_seed=sc.seed)

    db_ids: dict[str, int] = {}
    db_shards: dict[str, int] = {}
    prop_ids: dict[str, int] = {}
    prop_db: dict[str, str] = {}
    _run_market_script(sc, engine, assoc, id_of, db_ids, db_shards,
                       prop_ids, prop_db)

    worker_ids: dict[str, str] = {}
    for w in sc.workers:
        owner = ledger.create_account()
        name_of[owner] = f"owner:{w.name}"
        wid = market.register_worker(owner, w.trusted, w.rate)
        worker_ids[w.name] = wid
        name_of[wid] = w.name

    faults_by_job: dict[str, list[FaultSpec]] = {}
    for fd in sc.faults:
        jname = fd.job if fd.job is not None else sc.jobs[0].name
        faults_by_job.setdefault(jname, []).append(
            FaultSpec(worker_ids[fd.worker], FaultKind(fd.kind),
                      fd.epoch, fd.step)
        )

    jobs_out: dict[str, dict] = {}
    for jd in sc.jobs:
        spec = ModelSpec(
            layer_dims=jd.dims,
            activation=jd.activation,
            loss=jd.loss,
            init_seed=jd.init_seed,
            learning_rate=jd.lr,
        )
        job_id = market.submit_job(
            user=id_of[jd.user],
            database_id=db_ids[jd.database],
            model_spec=spec,
            epochs=jd.epochs,
            batch_size=jd.batch,
            price=jd.price,
            tmr=jd.tmr,
            cut_points=list(jd.cut),
            epsilon=jd.epsilon,
            rho=jd.rho,
            seed=sc.seed,
        )
        run = engine.start_job(job_id, faults_by_job.get(jd.name, []))
        net.run_until_idle()
        engine.ensure_all_done()
        jobs_out[jd.name] = _job_record(jd, run, market, name_of)

    data = {
        "format": REPORT_FORMAT,
        "scenario": name,
        "seed": sc.seed,
        "chain": {
            "height": ledger.height,
            "head": ledger.head_hash.hex(),
            "replay_ok": ledger.replay_head() == ledger.head_hash
            and ledger.verify_chain(),
        },
        "supply": dict(sorted(ledger.supply.items())),
        "balances": _balances(ledger, name_of),
        "shareholders": {
            dbn: {
                name_of.get(a, a): n
                for a, n in sorted(assoc.databases[did].shareholders.items(),
                                   key=lambda kv: name_of.get(kv[0], kv[0]))
            }
            for dbn, did in sorted(db_ids.items())
        },
        "endowment": sc.endowment,
        "theta": str(sc.theta),
        "proposals": [
            {
                "name": pn,
                "proposal_id": pid,
                "database": prop_db[pn],
                "status": assoc.proposals[pid].status.value,
                "yes": assoc.proposals[pid].yes_power,
                "no": assoc.proposals[pid].no_power,
                "snapshot": assoc.proposals[pid].supply_snapshot,
            }
            for pn, pid in sorted(prop_ids.items(), key=lambda kv: kv[1])
        ],
        "registry": [
            {
                "entry_id": e.entry_id,
                "dataset_ref": e.dataset_ref.hex(),
                "contributor": name_of.get(e.contributor, e.contributor),
                "proposal_id": e.proposal_id,
                "block_height": e.block_height,
            }
            for e in ledger.registry
        ],
        "workers": {
            w.name: {
                "trusted": w.trusted,
                "rate": str(w.rate),
                "status": market.workers[worker_ids[w.name]].status.value,
            }
            for w in sc.workers
        },
        "blacklist": sorted(
            name_of.get(wid, wid)
            for wid, wk in market.workers.items()
            if wk.status.value == "blacklisted"
        ),
        "jobs": jobs_out,
        "events": _translate(engine.events, name_of),
    }
    return data


def _run_market_script(sc, engine, assoc, id_of, db_ids, db_shards,
                       prop_ids, prop_db) -> None:
    for cmd in sc.market_script:
        f = cmd.fields
        if cmd.op == "database":
            initiator = id_of[f["initiator"]]
            request = DataRequest(
                request_id=len(db_ids) + 1,
                initiator=initiator,
                description=f["description"],
                shard_count_expected=f["shards_per_entry"],
            )
            did = assoc.create_database(initiator, request)
            db_ids[f["name"]] = did
            db_shards[f["name"]] = f["shards_per_entry"]
            engine.log("database_created", name=f["name"], database_id=did,
                       shards_per_entry=f["shards_per_entry"])
        elif cmd.op == "delegate":
            assoc.delegate_votes(id_of[f["from"]], id_of[f["to"]], f["expiry"])
            engine.log("delegated", delegator=f["from"], oracle=f["to"],
                       expiry_height=f["expiry"])
        elif cmd.op == "propose":
            pid = assoc.submit_proposal(
                id_of[f["contributor"]], db_ids[f["database"]], f["ref"]
            )
            prop_ids[f["name"]] = pid
            prop_db[f["name"]] = f["database"]
            engine.log("proposal_submitted", name=f["name"], proposal_id=pid,
                       database=f["database"], contributor=f["contributor"])
        elif cmd.op == "vote":
            receipt = assoc.cast_vote(
                id_of[f["voter"]], prop_ids[f["proposal"]], f["approve"]
            )
            engine.log("vote_cast", proposal=f["proposal"], voter=f["voter"],
                       approve=f["approve"], power=receipt.power)
        elif cmd.op == "tally":
            outcome = assoc.tally_and_finalize(prop_ids[f["proposal"]])
            engine.log("proposal_tallied", proposal=f["proposal"],
                       outcome=outcome.value)
        else:  # pragma: no cover - parser admits no other ops
            raise AssertionError(cmd.op)


def _job_record(jd, run, market: ComputeMarket, name_of: dict) -> dict:
    rec = market.settlements[run.job.job_id]
    sched = market.schedules[run.job.job_id]
    acc = run.accounting.as_dict()
    return {
        "job_id": run.job.job_id,
        "status": run.status,
        "price": run.job.price,
        "epochs": run.job.epochs,
        "total_shards": run.job.total_shards,
        "cap": sched.cap,
        "tmr": run.job.tmr,
        "n_segments": run.job.n_segments,
        "slots_per_step": run.job.slots_per_step,
        "epsilon": str(run.job.epsilon),
        "rho": str(run.job.rho),
        "groups": {
            str(g): [name_of.get(w, w) for w in st.plan.workers]
            for g, st in sorted(run.groups.items())
        },
        "started_ms": str(run.start_ms),
        "ended_ms": str(run.end_ms),
        "compute_ms": acc["compute_ms"],
        "comm_ms": acc["comm_ms"],
        "scheduling_ms": acc["scheduling_ms"],
        "work_units": acc["work_units"],
        "overhead_factor": str(run.overhead_factor),
        "divergences": run.divergences,
        "epoch_digests": {
            str(e): d for e, d in sorted(run.epoch_digests.items())
        },
        "exposure": {
            name_of.get(w, w): len(s)
            for w, s in sorted(run.tracker.seen.items(),
                               key=lambda kv: name_of.get(kv[0], kv[0]))
        },
        "work_by_worker": {
            name_of.get(w, w): str(u)
            for w, u in sorted(run.work_by_worker.items(),
                               key=lambda kv: name_of.get(kv[0], kv[0]))
        },
        "settlement": {
            "verified": rec.verified,
            "dividends": {
                name_of.get(a, a): n for a, n in sorted(rec.dividends.items())
            },
            "worker_payments": {
                name_of.get(w, w): n
                for w, n in sorted(rec.worker_payments.items(),
                                   key=lambda kv: name_of.get(kv[0], kv[0]))
            },
            "treasury": rec.treasury,
            "refund": rec.refund,
        },
    }


def _balances(ledger: Ledger, name_of: dict) -> dict:
    out: dict[str, dict[str, int]] = {}
    for (acct, cls), amt in ledger.balances.items():
        if amt == 0:
            continue
        out.setdefault(name_of.get(acct, acct), {})[cls] = amt
    return {
        name: dict(sorted(classes.items()))
        for name, classes in sorted(out.items())
    }


def _translate(obj, names: dict):
    """Swap raw account/worker ids for scenario names, recursively."""
    if isinstance(obj, str):
        return names.get(obj, obj)
    if isinstance(obj, dict):
        return {
            (_translate(k, names) if isinstance(k, str) else k):
                _translate(v, names)
            for k, v in obj.items()
        }
    if isinstance(obj, (list, tuple)):
        return [_translate(x, names) for x in obj]
    return obj


# -- rendering ----------------------------------------------------------------


def render_report(data: dict) -> str:
    lines: list[str] = []
    push = lines.append
    push("dual-market run report")
    push(f"scenario: {data['scenario']}  seed: {data['seed']}")
    chain = data["chain"]
    push(
        f"chain: height {chain['height']}, head {chain['head'][:16]}.., "
        f"replay {'ok' if chain['replay_ok'] else 'BROKEN'}"
    )
    push("")
    push("supply: " + ", ".join(f"{c}={n}" for c, n in data["supply"].items()))
    push("balances:")
    for who, classes in data["balances"].items():
        row = ", ".join(f"{c}={n}" for c, n in classes.items())
        push(f"  {who}: {row}")
    if data["proposals"]:
        push("proposals:")
        for p in data["proposals"]:
            push(
                f"  {p['name']} (db {p['database']}): {p['status']}  "
                f"yes={p['yes']} no={p['no']} snapshot={p['snapshot']}"
            )
    for dbn, holders in data["shareholders"].items():
        row = ", ".join(f"{a}={n}" for a, n in holders.items()) or "(none)"
        push(f"shareholders[{dbn}]: {row}")
    for jn, j in data["jobs"].items():
        push("")
        push(
            f"job {jn}: {j['status']}  price={j['price']} "
            f"epochs={j['epochs']} shards={j['total_shards']} cap={j['cap']}"
        )
        push(
            f"  tmr={'on' if j['tmr'] else 'off'} segments={j['n_segments']} "
            f"slots_per_step={j['slots_per_step']} divergences={j['divergences']}"
        )
        push(
            f"  work_units={j['work_units']} overhead={j['overhead_factor']}"
        )
        push(
            f"  compute_ms={j['compute_ms']} comm_ms={j['comm_ms']} "
            f"scheduling_ms={j['scheduling_ms']}"
        )
        s = j["settlement"]
        div = ", ".join(f"{a}={n}" for a, n in s["dividends"].items()) or "-"
        pay = ", ".join(f"{w}={n}" for w, n in s["worker_payments"].items()) or "-"
        push(f"  dividends: {div}")
        push(f"  worker pay: {pay}")
        push(f"  treasury={s['treasury']} refund={s['refund']}")
        if j["epoch_digests"]:
            digests = " ".join(
                f"{e}:{d[:12]}" for e, d in j["epoch_digests"].items()
            )
            push(f"  verified epochs: {digests}")
    push("")
    push("blacklist: " + (", ".join(data["blacklist"]) or "(empty)"))
    push(f"events: {len(data['events'])}")
    push("")
    push(MACHINE_MARKER)
    push(json.dumps(data, sort_keys=True, separators=(",", ":")))
    push("")
    return "\n".join(lines)


def machine_part(text: str) -> dict:
    """Extract the JSON payload from a rendered report."""
    marker = text.find(MACHINE_MARKER)
    if marker < 0:
        raise ValidationError("no machine-readable section found")
    payload = text[marker + len(MACHINE_MARKER):].strip()
    try:
        return json.loads(payload)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"machine section is not valid JSON: {exc}") from exc


# -- offline verification ------------------------------------------------------


def verify_report(text: str) -> list[str]:
    """Re-check every invariant the report claims. Returns check names."""
    data = machine_part(text)
    checks: list[str] = []

    def ok(name: str, cond: bool, detail: str = "") -> None:
        if not cond:
            raise ValidationError(f"check failed: {name}{': ' + detail if detail else ''}")
        checks.append(name)

    ok("chain replay", data["chain"]["replay_ok"] is True)

    for cls, supply in data["supply"].items():
        held = sum(c.get(cls, 0) for c in data["balances"].values())
        ok(f"supply conservation [{cls}]", held == supply,
           f"balances sum {held}, supply {supply}")

    for jn, j in data["jobs"].items():
        s = j["settlement"]
        total = (
            sum(s["dividends"].values())
            + sum(s["worker_payments"].values())
            + s["treasury"]
            + s["refund"]
        )
        ok(f"settlement conservation [{jn}]", total == j["price"],
           f"parts sum {total}, price {j['price']}")
        if j["status"] == "failed":
            ok(f"failed job refunded [{jn}]", s["refund"] == j["price"])
        for w, n in j["exposure"].items():
            ok(f"exposure cap [{jn}/{w}]", n <= j["cap"],
               f"{w} saw {n} shards, cap {j['cap']}")
        if j["status"] == "verified":
            want = {str(e) for e in range(j["epochs"])}
            ok(f"all epochs verified [{jn}]",
               set(j["epoch_digests"]) == want)

    blacklist = set(data["blacklist"])
    for ev in data["events"]:
        if ev["kind"] == "job_scheduled":
            seen: set[str] = set()
            for grp in ev["groups"]:
                ok("groups disjoint", not (set(grp) & seen),
                   f"job {ev['job_id']}")
                seen.update(grp)
        if ev["kind"] == "exfiltrate_log":
            ok("exfiltration bounded", ev["count"] <= ev["cap"],
               f"dumped {ev['count']}, cap {ev['cap']}")
        if ev["kind"] == "divergence":
            ok("divergence names groups", len(ev["minority_groups"]) > 0)
        if ev["kind"] == "blacklist":
            ok("blacklist recorded", set(ev["workers"]) <= blacklist,
               str(ev["workers"]))

    rosters: dict[int, set[str]] = {}
    for ev in data["events"]:
        if ev["kind"] == "job_scheduled":
            rosters[ev["job_id"]] = {w for grp in ev["groups"] for w in grp}
        if ev["kind"] == "group_replaced":
            fresh = set(ev["workers"])
            prior = rosters.setdefault(ev["job_id"], set())
            ok("replacement workers fresh", not (fresh & prior),
               f"job {ev['job_id']} group {ev['group']}")
            prior.update(fresh)

    endow = data.get("endowment", 0)
    accepted_by_db: dict[str, int] = {}
    for p in data["proposals"]:
        if p["status"] == "accepted":
            accepted_by_db[p["database"]] = accepted_by_db.get(p["database"], 0) + 1
    for dbn, holders in data["shareholders"].items():
        want = accepted_by_db.get(dbn, 0) + endow
        have = sum(holders.values())
        ok(f"share issuance [{dbn}]", have == want,
           f"shares {have}, accepted+endowment {want}")
    return checks
