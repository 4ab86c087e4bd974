"""Line-oriented scenario files.

A scenario is sectioned text. Blank lines and `#` comments are ignored.
Sections mirror the module split; within a section each line is either a
`key = value` setting or a command with positional and `key=value` fields:

    [meta]
    seed = 42

    [simnet]
    bandwidth = 125000000          # bytes per simulated second
    fixed_ms = 1
    scheduling_overhead_ms = 176.66

    [accounts]
    account alice cash=1000 curator=2

    [data_market]
    theta = 1/2
    endowment = 0
    database db1 initiator=alice shards_per_entry=10
    propose p1 database=db1 contributor=alice ref=auto
    delegate from=carol to=oscar expiry=100
    vote alice p1 yes
    tally p1

    [workers]
    workers count=6 rate=1         # bulk untrusted pool, named u1..u6
    worker t1 trusted rate=1

    [jobs]
    job j1 database=db1 user=alice price=100 epochs=2 batch=4 \
        dims=8,16,16,4 tmr=on cut=2 epsilon=1/2 rho=1/2 lr=0.01

    [faults]
    fault worker=u3 kind=corrupt_result epoch=1 step=0

Rationals accept `1/2`, `0.5`, or `3` and are kept exact. `ref=auto`
derives the dataset content hash from the proposal name. Structural
problems (bad token, unknown section or command) raise ParseError with a
line and column; semantic problems (unknown keys, missing fields, dangling
names) raise ValidationError.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ParseError, ValidationError

_SECTION_RE = re.compile(r"^\[([a-z_]+)\]$")
SECTIONS = ("meta", "simnet", "accounts", "data_market", "workers", "jobs", "faults")
FAULT_KINDS = ("crash", "corrupt_result", "exfiltrate")
_TRUE = ("on", "true", "yes", "1")
_FALSE = ("off", "false", "no", "0")


@dataclass(frozen=True)
class AccountDecl:
    name: str
    cash: int
    curator: int


@dataclass(frozen=True)
class DatabaseDecl:
    name: str
    initiator: str
    shards_per_entry: int
    description: str


@dataclass(frozen=True)
class MarketCmd:
    """One scripted data-market step, executed in file order."""

    op: str  # database | delegate | propose | vote | tally
    fields: dict


@dataclass(frozen=True)
class WorkerDecl:
    name: str
    trusted: bool
    rate: Fraction


@dataclass(frozen=True)
class JobDecl:
    name: str
    database: str
    user: str
    price: int
    epochs: int
    batch: int
    dims: tuple[int, ...]
    activation: str
    loss: str
    lr: float
    init_seed: int
    tmr: bool
    cut: tuple[int, ...]
    epsilon: Fraction
    rho: Fraction


@dataclass(frozen=True)
class FaultDecl:
    worker: str
    kind: str
    epoch: int
    step: int
    job: str | None


@dataclass
class Scenario:
    seed: int = 42
    bandwidth: int = 125_000_000
    fixed_ms: Fraction = Fraction(1)
    scheduling_overhead_ms: Fraction = Fraction(17666, 100)
    theta: Fraction = Fraction(1, 2)
    endowment: int = 0
    accounts: list[AccountDecl] = field(default_factory=list)
    market_script: list[MarketCmd] = field(default_factory=list)
    workers: list[WorkerDecl] = field(default_factory=list)
    jobs: list[JobDecl] = field(default_factory=list)
    faults: list[FaultDecl] = field(default_factory=list)

    def validate(self) -> None:
        names = [a.name for a in self.accounts]
        if len(names) != len(set(names)):
            raise ValidationError("duplicate account name")
        acct = set(names)
        dbs: set[str] = set()
        proposals: set[str] = set()
        for cmd in self.market_script:
            f = cmd.fields
            if cmd.op == "database":
                if f["name"] in dbs:
                    raise ValidationError(f"duplicate database {f['name']!r}")
                if f["initiator"] not in acct:
                    raise ValidationError(
                        f"database {f['name']!r}: unknown initiator {f['initiator']!r}"
                    )
                dbs.add(f["name"])
            elif cmd.op == "propose":
                if f["name"] in proposals:
                    raise ValidationError(f"duplicate proposal {f['name']!r}")
                if f["database"] not in dbs:
                    raise ValidationError(
                        f"proposal {f['name']!r}: unknown database {f['database']!r}"
                    )
                if f["contributor"] not in acct:
                    raise ValidationError(
                        f"proposal {f['name']!r}: unknown contributor"
                    )
                proposals.add(f["name"])
            elif cmd.op == "delegate":
                for k in ("from", "to"):
                    if f[k] not in acct:
                        raise ValidationError(f"delegate: unknown account {f[k]!r}")
            elif cmd.op == "vote":
                if f["voter"] not in acct:
                    raise ValidationError(f"vote: unknown account {f['voter']!r}")
                if f["proposal"] not in proposals:
                    raise ValidationError(
                        f"vote: unknown proposal {f['proposal']!r}"
                    )
            elif cmd.op == "tally":
                if f["proposal"] not in proposals:
                    raise ValidationError(
                        f"tally: unknown proposal {f['proposal']!r}"
                    )
        wnames = [w.name for w in self.workers]
        if len(wnames) != len(set(wnames)):
            raise ValidationError("duplicate worker name")
        wset = set(wnames)
        jnames = set()
        for j in self.jobs:
            if j.name in jnames:
                raise ValidationError(f"duplicate job {j.name!r}")
            jnames.add(j.name)
            if j.database not in dbs:
                raise ValidationError(
                    f"job {j.name!r}: unknown database {j.database!r}"
                )
            if j.user not in acct:
                raise ValidationError(f"job {j.name!r}: unknown user {j.user!r}")
        fault_workers = set()
        for fa in self.faults:
            if fa.worker not in wset:
                raise ValidationError(f"fault: unknown worker {fa.worker!r}")
            if fa.worker in fault_workers:
                raise ValidationError(
                    f"fault: worker {fa.worker!r} already has a fault"
                )
            fault_workers.add(fa.worker)
            if fa.job is not None and fa.job not in jnames:
                raise ValidationError(f"fault: unknown job {fa.job!r}")
            if fa.job is None and len(self.jobs) != 1:
                raise ValidationError(
                    "fault: job= is required when multiple jobs are declared"
                )


def dataset_ref_for(name: str) -> bytes:
    return hashlib.sha256(b"dataset:" + name.encode("utf-8")).digest()


# -- parsing ------------------------------------------------------------------


def parse_scenario(text: str) -> Scenario:
    sc = Scenario()
    section: str | None = None
    pending = ""  # backslash-continued prefix
    pending_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if pending:
            line = pending + " " + line.strip()
            lineno = pending_line
            pending = ""
        if line.endswith("\\"):
            pending = line[:-1].strip()
            pending_line = lineno
            continue
        if not line.strip():
            continue
        stripped = line.strip()
        m = _SECTION_RE.match(stripped)
        if m:
            name = m.group(1)
            if name not in SECTIONS:
                raise ParseError(
                    f"unknown section [{name}]", lineno, _col(raw, stripped)
                )
            section = name
            continue
        if section is None:
            raise ParseError("content before any section", lineno, 1)
        tokens = stripped.split()
        try:
            _parse_line(sc, section, tokens, raw, lineno)
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
    if pending:
        raise ParseError("unterminated line continuation", pending_line, 1)
    sc.validate()
    return sc


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def _col(raw: str, token: str) -> int:
    pos = raw.find(token)
    return pos + 1 if pos >= 0 else 1


def _parse_line(
    sc: Scenario, section: str, tokens: list[str], raw: str, lineno: int
) -> None:
    if section in ("meta", "simnet"):
        key, value = _parse_setting(tokens, raw, lineno)
        _apply_setting(sc, section, key, value, raw, lineno)
        return
    if section == "data_market" and "=" in "".join(tokens[:2]) and tokens[0] not in (
        "database", "delegate", "propose", "vote", "tally"
    ):
        key, value = _parse_setting(tokens, raw, lineno)
        _apply_setting(sc, section, key, value, raw, lineno)
        return
    cmd = tokens[0]
    rest = tokens[1:]
    positional = [t for t in rest if "=" not in t]
    kv = _kv_map(rest, raw, lineno)
    handler = _COMMANDS.get((section, cmd))
    if handler is None:
        raise ParseError(
            f"unknown command {cmd!r} in [{section}]", lineno, _col(raw, cmd)
        )
    handler(sc, positional, kv, raw, lineno)


def _parse_setting(tokens: list[str], raw: str, lineno: int) -> tuple[str, str]:
    joined = " ".join(tokens)
    if "=" not in joined:
        raise ParseError(f"expected key = value, got {joined!r}", lineno, 1)
    key, _, value = joined.partition("=")
    key = key.strip()
    value = value.strip()
    if not key or not value:
        raise ParseError("empty key or value", lineno, _col(raw, "="))
    return key, value


def _apply_setting(
    sc: Scenario, section: str, key: str, value: str, raw: str, lineno: int
) -> None:
    col = _col(raw, key)
    try:
        if section == "meta":
            if key == "seed":
                sc.seed = _int(value)
                return
        elif section == "simnet":
            if key == "bandwidth":
                sc.bandwidth = _int(value)
                return
            if key == "fixed_ms":
                sc.fixed_ms = _fraction(value)
                return
            if key == "scheduling_overhead_ms":
                sc.scheduling_overhead_ms = _fraction(value)
                return
        elif section == "data_market":
            if key == "theta":
                sc.theta = _fraction(value)
                return
            if key == "endowment":
                sc.endowment = _int(value)
                return
    except ValueError as exc:
        raise ParseError(str(exc), lineno, col) from exc
    raise ValidationError(f"unknown setting {key!r} in [{section}]")


def _kv_map(tokens: list[str], raw: str, lineno: int) -> dict[str, str]:
    out: dict[str, str] = {}
    for t in tokens:
        if "=" not in t:
            continue
        k, _, v = t.partition("=")
        if not k or not v:
            raise ParseError(f"malformed field {t!r}", lineno, _col(raw, t))
        if k in out:
            raise ParseError(f"repeated field {k!r}", lineno, _col(raw, t))
        out[k] = v
    return out


def _int(value: str) -> int:
    try:
        return int(value, 10)
    except ValueError:
        raise ValueError(f"expected integer, got {value!r}") from None


def _fraction(value: str) -> Fraction:
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"expected rational, got {value!r}") from None


def _bool(value: str) -> bool:
    if value.lower() in _TRUE:
        return True
    if value.lower() in _FALSE:
        return False
    raise ValueError(f"expected on/off, got {value!r}")


def _csv_ints(value: str) -> tuple[int, ...]:
    if value.lower() in ("none", ""):
        return ()
    return tuple(_int(p) for p in value.split(","))


def _take(
    kv: dict[str, str], allowed: dict[str, object], what: str
) -> dict[str, str]:
    unknown = set(kv) - set(allowed)
    if unknown:
        raise ValidationError(
            f"{what}: unknown key(s) {', '.join(sorted(unknown))}"
        )
    return kv


def _need(kv: dict[str, str], key: str, what: str) -> str:
    if key not in kv:
        raise ValidationError(f"{what}: missing required {key}=")
    return kv[key]


def _one_positional(
    positional: list[str], what: str, raw: str, lineno: int
) -> str:
    if len(positional) != 1:
        raise ParseError(
            f"{what} takes exactly one name, got {positional!r}", lineno, 1
        )
    return positional[0]


# -- per-command handlers ---------------------------------------------------------


def _cmd_account(sc, positional, kv, raw, lineno):
    name = _one_positional(positional, "account", raw, lineno)
    _take(kv, {"cash": 0, "curator": 0}, f"account {name}")
    try:
        sc.accounts.append(
            AccountDecl(
                name=name,
                cash=_int(kv.get("cash", "0")),
                curator=_int(kv.get("curator", "0")),
            )
        )
    except ValueError as exc:
        raise ParseError(str(exc), lineno, 1) from exc


def _cmd_database(sc, positional, kv, raw, lineno):
    name = _one_positional(positional, "database", raw, lineno)
    _take(
        kv,
        {"initiator": 0, "shards_per_entry": 0, "description": 0},
        f"database {name}",
    )
    try:
        decl = DatabaseDecl(
            name=name,
            initiator=_need(kv, "initiator", f"database {name}"),
            shards_per_entry=_int(_need(kv, "shards_per_entry", f"database {name}")),
            description=kv.get("description", ""),
        )
    except ValueError as exc:
        raise ParseError(str(exc), lineno, 1) from exc
    if decl.shards_per_entry < 1:
        raise ValidationError(f"database {name}: shards_per_entry must be >= 1")
    sc.market_script.append(
        MarketCmd("database", {
            "name": decl.name,
            "initiator": decl.initiator,
            "shards_per_entry": decl.shards_per_entry,
            "description": decl.description,
        })
    )


def _cmd_delegate(sc, positional, kv, raw, lineno):
    if positional:
        raise ParseError(
            f"delegate takes key=value fields only, got {positional!r}", lineno, 1
        )
    _take(kv, {"from": 0, "to": 0, "expiry": 0}, "delegate")
    try:
        sc.market_script.append(
            MarketCmd("delegate", {
                "from": _need(kv, "from", "delegate"),
                "to": _need(kv, "to", "delegate"),
                "expiry": _int(_need(kv, "expiry", "delegate")),
            })
        )
    except ValueError as exc:
        raise ParseError(str(exc), lineno, 1) from exc


def _cmd_propose(sc, positional, kv, raw, lineno):
    name = _one_positional(positional, "propose", raw, lineno)
    _take(kv, {"database": 0, "contributor": 0, "ref": 0}, f"propose {name}")
    ref = kv.get("ref", "auto")
    if ref == "auto":
        ref_bytes = dataset_ref_for(name)
    else:
        try:
            ref_bytes = bytes.fromhex(ref)
        except ValueError:
            raise ParseError(
                f"ref must be 'auto' or hex, got {ref!r}", lineno, _col(raw, ref)
            ) from None
    sc.market_script.append(
        MarketCmd("propose", {
            "name": name,
            "database": _need(kv, "database", f"propose {name}"),
            "contributor": _need(kv, "contributor", f"propose {name}"),
            "ref": ref_bytes,
        })
    )


def _cmd_vote(sc, positional, kv, raw, lineno):
    if kv or len(positional) != 3:
        raise ParseError(
            "vote takes: vote <account> <proposal> yes|no", lineno, 1
        )
    voter, proposal, choice = positional
    try:
        approve = _bool(choice)
    except ValueError as exc:
        raise ParseError(str(exc), lineno, _col(raw, choice)) from exc
    sc.market_script.append(
        MarketCmd("vote", {"voter": voter, "proposal": proposal, "approve": approve})
    )


def _cmd_tally(sc, positional, kv, raw, lineno):
    if kv or len(positional) != 1:
        raise ParseError("tally takes: tally <proposal>", lineno, 1)
    sc.market_script.append(MarketCmd("tally", {"proposal": positional[0]}))


def _cmd_workers(sc, positional, kv, raw, lineno):
    if positional:
        raise ParseError(
            f"workers takes key=value fields only, got {positional!r}", lineno, 1
        )
    _take(kv, {"count": 0, "rate": 0, "prefix": 0}, "workers")
    try:
        count = _int(_need(kv, "count", "workers"))
        rate = _fraction(kv.get("rate", "1"))
    except ValueError as exc:
        raise ParseError(str(exc), lineno, 1) from exc
    if count < 1:
        raise ValidationError("workers: count must be >= 1")
    if rate <= 0:
        raise ValidationError("workers: rate must be positive")
    prefix = kv.get("prefix", "u")
    for i in range(1, count + 1):
        sc.workers.append(WorkerDecl(f"{prefix}{i}", trusted=False, rate=rate))


def _cmd_worker(sc, positional, kv, raw, lineno):
    if not positional:
        raise ParseError("worker needs a name", lineno, 1)
    name = positional[0]
    flags = positional[1:]
    trusted = False
    for fl in flags:
        if fl == "trusted":
            trusted = True
        else:
            raise ParseError(
                f"unknown worker flag {fl!r}", lineno, _col(raw, fl)
            )
    _take(kv, {"rate": 0}, f"worker {name}")
    try:
        rate = _fraction(kv.get("rate", "1"))
    except ValueError as exc:
        raise ParseError(str(exc), lineno, 1) from exc
    if rate <= 0:
        raise ValidationError(f"worker {name}: rate must be positive")
    sc.workers.append(WorkerDecl(name, trusted=trusted, rate=rate))


def _cmd_job(sc, positional, kv, raw, lineno):
    name = _one_positional(positional, "job", raw, lineno)
    allowed = {
        "database": 0, "user": 0, "price": 0, "epochs": 0, "batch": 0,
        "dims": 0, "activation": 0, "loss": 0, "lr": 0, "init_seed": 0,
        "tmr": 0, "cut": 0, "epsilon": 0, "rho": 0,
    }
    _take(kv, allowed, f"job {name}")
    what = f"job {name}"
    try:
        decl = JobDecl(
            name=name,
            database=_need(kv, "database", what),
            user=_need(kv, "user", what),
            price=_int(_need(kv, "price", what)),
            epochs=_int(kv.get("epochs", "1")),
            batch=_int(kv.get("batch", "32")),
            dims=_csv_ints(_need(kv, "dims", what)),
            activation=kv.get("activation", "tanh"),
            loss=kv.get("loss", "mse"),
            lr=float(_fraction(kv.get("lr", "0.01"))),
            init_seed=_int(kv.get("init_seed", "0")),
            tmr=_bool(kv.get("tmr", "off")),
            cut=_csv_ints(kv.get("cut", "none")),
            epsilon=_fraction(kv.get("epsilon", "1/20")),
            rho=_fraction(kv.get("rho", "1/2")),
        )
    except ValueError as exc:
        raise ParseError(str(exc), lineno, 1) from exc
    if decl.price < 0:
        raise ValidationError(f"{what}: price must be non-negative")
    if decl.epochs < 1 or decl.batch < 1:
        raise ValidationError(f"{what}: epochs and batch must be >= 1")
    if len(decl.dims) < 2 or any(d < 1 for d in decl.dims):
        raise ValidationError(f"{what}: dims needs >= 2 positive layer widths")
    if decl.activation not in ("tanh", "relu"):
        raise ValidationError(f"{what}: unknown activation {decl.activation!r}")
    if decl.loss not in ("mse", "softmax_ce"):
        raise ValidationError(f"{what}: unknown loss {decl.loss!r}")
    if decl.lr <= 0:
        raise ValidationError(f"{what}: lr must be positive")
    if any(not 0 < c < len(decl.dims) - 1 for c in decl.cut):
        raise ValidationError(f"{what}: cut points must be interior layers")
    if list(decl.cut) != sorted(set(decl.cut)):
        raise ValidationError(f"{what}: cut points must be strictly increasing")
    if not 0 < decl.epsilon <= 1:
        raise ValidationError(f"{what}: epsilon must lie in (0, 1]")
    if not 0 <= decl.rho <= 1:
        raise ValidationError(f"{what}: rho must lie in [0, 1]")
    sc.jobs.append(decl)


def _cmd_fault(sc, positional, kv, raw, lineno):
    if positional:
        raise ParseError(
            f"fault takes key=value fields only, got {positional!r}", lineno, 1
        )
    _take(kv, {"worker": 0, "kind": 0, "epoch": 0, "step": 0, "job": 0}, "fault")
    kind = _need(kv, "kind", "fault")
    if kind not in FAULT_KINDS:
        raise ValidationError(
            f"fault: kind must be one of {', '.join(FAULT_KINDS)}"
        )
    try:
        sc.faults.append(
            FaultDecl(
                worker=_need(kv, "worker", "fault"),
                kind=kind,
                epoch=_int(kv.get("epoch", "0")),
                step=_int(kv.get("step", "0")),
                job=kv.get("job"),
            )
        )
    except ValueError as exc:
        raise ParseError(str(exc), lineno, 1) from exc


_COMMANDS = {
    ("accounts", "account"): _cmd_account,
    ("data_market", "database"): _cmd_database,
    ("data_market", "delegate"): _cmd_delegate,
    ("data_market", "propose"): _cmd_propose,
    ("data_market", "vote"): _cmd_vote,
    ("data_market", "tally"): _cmd_tally,
    ("workers", "workers"): _cmd_workers,
    ("workers", "worker"): _cmd_worker,
    ("jobs", "job"): _cmd_job,
    ("faults", "fault"): _cmd_fault,
}
