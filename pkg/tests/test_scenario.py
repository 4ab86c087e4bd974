"""Scenario grammar: happy paths, structural and semantic failures."""

import hashlib
from fractions import Fraction

import pytest

from dualmarket.errors import ParseError, ValidationError
from dualmarket.scenario import (
    FaultDecl,
    JobDecl,
    WorkerDecl,
    dataset_ref_for,
    load_scenario,
    parse_scenario,
)

BASE = """
[meta]
seed = 9

[simnet]
bandwidth = 1000
fixed_ms = 1/4
scheduling_overhead_ms = 176.66

[accounts]
account alice cash=1000 curator=2
account bob curator=1

[data_market]
theta = 2/3
endowment = 1
database db1 initiator=alice shards_per_entry=5 description=images
propose p1 database=db1 contributor=bob ref=auto
delegate from=bob to=alice expiry=100
vote alice p1 yes
tally p1

[workers]
workers count=3 rate=1/2
worker t1 trusted rate=4

[jobs]
job j1 database=db1 user=alice price=100 epochs=2 batch=4 \\
    dims=6,8,4 activation=tanh loss=mse lr=0.01 init_seed=1 \\
    tmr=on cut=1 epsilon=1/2 rho=1/2

[faults]
fault worker=u2 kind=crash epoch=0 step=1
"""


def test_full_scenario_parses():
    sc = parse_scenario(BASE)
    assert sc.seed == 9
    assert sc.bandwidth == 1000
    assert sc.fixed_ms == Fraction(1, 4)
    assert sc.scheduling_overhead_ms == Fraction(17666, 100)
    assert sc.theta == Fraction(2, 3)
    assert sc.endowment == 1
    assert [a.name for a in sc.accounts] == ["alice", "bob"]
    assert sc.accounts[0].cash == 1000 and sc.accounts[0].curator == 2
    assert sc.accounts[1].cash == 0
    ops = [c.op for c in sc.market_script]
    assert ops == ["database", "propose", "delegate", "vote", "tally"]
    assert sc.workers == [
        WorkerDecl("u1", False, Fraction(1, 2)),
        WorkerDecl("u2", False, Fraction(1, 2)),
        WorkerDecl("u3", False, Fraction(1, 2)),
        WorkerDecl("t1", True, Fraction(4)),
    ]
    assert sc.jobs == [
        JobDecl(
            name="j1", database="db1", user="alice", price=100, epochs=2,
            batch=4, dims=(6, 8, 4), activation="tanh", loss="mse", lr=0.01,
            init_seed=1, tmr=True, cut=(1,), epsilon=Fraction(1, 2),
            rho=Fraction(1, 2),
        )
    ]
    assert sc.faults == [FaultDecl("u2", "crash", 0, 1, None)]


def test_defaults():
    sc = parse_scenario("[meta]\n", )
    assert sc.seed == 42
    assert sc.bandwidth == 125_000_000
    assert sc.fixed_ms == Fraction(1)
    assert sc.scheduling_overhead_ms == Fraction(17666, 100)
    assert sc.theta == Fraction(1, 2)
    assert sc.endowment == 0


def test_job_field_defaults():
    sc = parse_scenario(
        "[accounts]\naccount a cash=10\n"
        "[data_market]\ndatabase d initiator=a shards_per_entry=1\n"
        "[jobs]\njob j database=d user=a price=0 dims=2,2\n"
    )
    (j,) = sc.jobs
    assert (j.epochs, j.batch) == (1, 32)
    assert (j.activation, j.loss, j.lr, j.init_seed) == ("tanh", "mse", 0.01, 0)
    assert (j.tmr, j.cut) == (False, ())
    assert (j.epsilon, j.rho) == (Fraction(1, 20), Fraction(1, 2))


def test_dataset_ref_auto_and_hex():
    sc = parse_scenario(
        "[accounts]\naccount a curator=1\n"
        "[data_market]\ndatabase d initiator=a shards_per_entry=1\n"
        "propose p1 database=d contributor=a ref=auto\n"
        "propose p2 database=d contributor=a ref=deadbeef\n"
    )
    p1, p2 = sc.market_script[1], sc.market_script[2]
    assert p1.fields["ref"] == hashlib.sha256(b"dataset:p1").digest()
    assert p1.fields["ref"] == dataset_ref_for("p1")
    assert p2.fields["ref"] == bytes.fromhex("deadbeef")


def test_comments_and_blank_lines_ignored():
    sc = parse_scenario("# header\n\n[meta]\nseed = 3  # trailing\n")
    assert sc.seed == 3


def test_line_continuation_preserves_first_line_number():
    bad = "[jobs]\njob j1 database=d \\\n    user=a price=1 dims=1\n"
    # dims=1 is a semantic failure reported at the command's first line
    with pytest.raises(ValidationError, match=r"line 2:"):
        parse_scenario(bad)


def test_unterminated_continuation():
    with pytest.raises(ParseError) as ei:
        parse_scenario("[meta]\nseed = 1 \\\n")
    assert ei.value.line == 2
    assert "unterminated" in str(ei.value)


def test_unknown_section_with_position():
    with pytest.raises(ParseError) as ei:
        parse_scenario("[meta]\n  [bogus]\n")
    assert ei.value.line == 2
    assert ei.value.column == 3


def test_content_before_section():
    with pytest.raises(ParseError) as ei:
        parse_scenario("seed = 1\n")
    assert ei.value.line == 1


def test_unknown_command():
    with pytest.raises(ParseError, match="unknown command 'frobnicate'"):
        parse_scenario("[accounts]\nfrobnicate x\n")


def test_unknown_setting_is_semantic():
    with pytest.raises(ValidationError, match="unknown setting 'speed'"):
        parse_scenario("[meta]\nspeed = 9\n")


def test_bad_integer_reports_position():
    with pytest.raises(ParseError) as ei:
        parse_scenario("[meta]\nseed = fast\n")
    assert ei.value.line == 2
    assert "expected integer" in str(ei.value)


def test_malformed_and_repeated_fields():
    with pytest.raises(ParseError, match="malformed field"):
        parse_scenario("[accounts]\naccount a cash=\n")
    with pytest.raises(ParseError, match="repeated field"):
        parse_scenario("[accounts]\naccount a cash=1 cash=2\n")


def test_unknown_key_rejected():
    with pytest.raises(ValidationError, match="unknown key"):
        parse_scenario("[accounts]\naccount a gold=5\n")


def test_vote_arity_and_choice():
    with pytest.raises(ParseError, match="vote takes"):
        parse_scenario("[data_market]\nvote alice yes\n")
    with pytest.raises(ParseError, match="expected on/off"):
        parse_scenario("[data_market]\nvote alice p1 maybe\n")


def test_bad_ref_hex():
    with pytest.raises(ParseError, match="ref must be 'auto' or hex"):
        parse_scenario(
            "[accounts]\naccount a curator=1\n"
            "[data_market]\ndatabase d initiator=a shards_per_entry=1\n"
            "propose p database=d contributor=a ref=xyz\n"
        )


def test_workers_bulk_prefix_and_validation():
    sc = parse_scenario("[workers]\nworkers count=2 rate=3 prefix=node\n")
    assert [w.name for w in sc.workers] == ["node1", "node2"]
    with pytest.raises(ValidationError, match="count must be >= 1"):
        parse_scenario("[workers]\nworkers count=0\n")
    with pytest.raises(ValidationError, match="rate must be positive"):
        parse_scenario("[workers]\nworkers count=1 rate=0\n")
    with pytest.raises(ParseError, match="unknown worker flag"):
        parse_scenario("[workers]\nworker w1 fancy rate=1\n")


def _job_line(**overrides):
    fields = {
        "database": "d", "user": "a", "price": "1", "epochs": "1",
        "batch": "1", "dims": "4,3,2", "activation": "tanh", "loss": "mse",
        "lr": "0.1", "tmr": "off", "cut": "none", "epsilon": "1/2",
        "rho": "1/2",
    }
    fields.update(overrides)
    body = " ".join(f"{k}={v}" for k, v in fields.items())
    return (
        "[accounts]\naccount a cash=10\n"
        "[data_market]\ndatabase d initiator=a shards_per_entry=1\n"
        f"[jobs]\njob j {body}\n"
    )


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"dims": "4"}, "dims needs >= 2"),
        ({"dims": "4,0,2"}, "dims needs >= 2 positive"),
        ({"activation": "sigmoid"}, "unknown activation"),
        ({"loss": "hinge"}, "unknown loss"),
        ({"lr": "0"}, "lr must be positive"),
        ({"cut": "0"}, "interior layers"),
        ({"cut": "2"}, "interior layers"),
        ({"cut": "1,1"}, "strictly increasing"),
        ({"epsilon": "0"}, "epsilon must lie"),
        ({"epsilon": "3/2"}, "epsilon must lie"),
        ({"rho": "2"}, "rho must lie"),
        ({"price": "-1"}, "price must be non-negative"),
        ({"epochs": "0"}, "epochs and batch"),
    ],
)
def test_job_semantic_validation(overrides, message):
    with pytest.raises(ValidationError, match=message):
        parse_scenario(_job_line(**overrides))


def test_job_with_valid_multi_cut():
    sc = parse_scenario(_job_line(dims="4,5,6,2", cut="1,2"))
    assert sc.jobs[0].cut == (1, 2)


def test_fault_validation():
    with pytest.raises(ValidationError, match="kind must be one of"):
        parse_scenario("[faults]\nfault worker=w kind=sulk\n")
    with pytest.raises(ValidationError, match="unknown worker"):
        parse_scenario("[workers]\nworker w1 rate=1\n[faults]\nfault worker=zz kind=crash\n")
    two_jobs = (
        "[accounts]\naccount a cash=10\n"
        "[data_market]\ndatabase d initiator=a shards_per_entry=1\n"
        "[workers]\nworker w1 rate=1\n"
        "[jobs]\njob j1 database=d user=a price=1 dims=2,2\n"
        "job j2 database=d user=a price=1 dims=2,2\n"
        "[faults]\nfault worker=w1 kind=crash\n"
    )
    with pytest.raises(ValidationError, match="job= is required"):
        parse_scenario(two_jobs)
    ok = two_jobs.replace("kind=crash", "kind=crash job=j2")
    assert parse_scenario(ok).faults[0].job == "j2"
    one_job = (
        "[accounts]\naccount a cash=10\n"
        "[data_market]\ndatabase d initiator=a shards_per_entry=1\n"
        "[workers]\nworker w1 rate=1\n"
        "[jobs]\njob j1 database=d user=a price=1 dims=2,2\n"
        "[faults]\nfault worker=w1 kind=crash\nfault worker=w1 kind=exfiltrate\n"
    )
    with pytest.raises(ValidationError, match="already has a fault"):
        parse_scenario(one_job)


@pytest.mark.parametrize(
    "text, message",
    [
        ("[accounts]\naccount a\naccount a\n", "duplicate account"),
        (
            "[accounts]\naccount a\n[data_market]\n"
            "database d initiator=zz shards_per_entry=1\n",
            "unknown initiator",
        ),
        (
            "[accounts]\naccount a\n[data_market]\n"
            "propose p database=nope contributor=a\n",
            "unknown database",
        ),
        ("[data_market]\ntally p9\n", "unknown proposal"),
        ("[data_market]\ndelegate from=x to=y expiry=1\n", "unknown account"),
        (
            "[workers]\nworker w rate=1\nworker w rate=1\n",
            "duplicate worker",
        ),
        (
            "[accounts]\naccount a cash=10\n[data_market]\n"
            "database d initiator=a shards_per_entry=1\n[jobs]\n"
            "job j database=d user=ghost price=1 dims=2,2\n",
            "unknown user",
        ),
        (
            "[accounts]\naccount a cash=10\n[jobs]\n"
            "job j database=ghost user=a price=1 dims=2,2\n",
            "unknown database",
        ),
    ],
)
def test_cross_reference_validation(text, message):
    with pytest.raises(ValidationError, match=message):
        parse_scenario(text)


def test_load_scenario_roundtrip(tmp_path):
    p = tmp_path / "s.scn"
    p.write_text(BASE, encoding="utf-8")
    sc = load_scenario(str(p))
    assert sc.seed == 9 and len(sc.workers) == 4
