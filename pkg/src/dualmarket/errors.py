"""Typed errors shared across the simulator modules."""


class MarketError(Exception):
    """Base class for every domain error raised by this package."""


# --- ledger ---------------------------------------------------------------

class LedgerError(MarketError):
    pass


class InvalidTx(LedgerError):
    pass


class InsufficientBalance(LedgerError):
    pass


class UnknownAccount(LedgerError):
    pass


class DuplicateProposal(LedgerError):
    """A registry entry for this proposal id already exists."""


# --- data market ----------------------------------------------------------

class DataMarketError(MarketError):
    pass


class UnknownDatabase(DataMarketError):
    pass


class DuplicateDatasetRef(DataMarketError):
    pass


class AlreadyDelegated(DataMarketError):
    pass


class NoTokens(DataMarketError):
    pass


class DelegatedAway(DataMarketError):
    """The caller forwarded its voting rights and cannot vote directly."""


class AlreadyVoted(DataMarketError):
    pass


class NoVotingPower(DataMarketError):
    pass


class ProposalClosed(DataMarketError):
    pass


class NoShareholders(DataMarketError):
    pass


# --- compute market -------------------------------------------------------

class ComputeMarketError(MarketError):
    pass


class UnknownWorker(ComputeMarketError):
    pass


class UnknownJob(ComputeMarketError):
    pass


class EmptyDatabase(ComputeMarketError):
    pass


class InvalidCutPoints(ComputeMarketError):
    pass


class InfeasibleSchedule(ComputeMarketError):
    """The worker pool cannot cover all shards under the exposure cap."""


class AlreadySettled(ComputeMarketError):
    pass


# --- verification ---------------------------------------------------------

class VerificationError(MarketError):
    pass


class MismatchedJob(VerificationError):
    """Digests being compared refer to different jobs or epochs."""


class ExposureExceeded(VerificationError):
    """A worker was assigned more data than the cap allows (scheduler bug)."""


# --- model ----------------------------------------------------------------

class ModelError(MarketError):
    pass


class InvalidSpec(ModelError):
    pass


class ShapeMismatch(ModelError):
    pass


class StaleCache(ModelError):
    """Backward pass given a cache that does not match the segment state."""


# --- simulated network ----------------------------------------------------

class SimError(MarketError):
    pass


class UnknownEndpoint(SimError):
    pass


class TrustedWorkerFault(SimError):
    """Faults may only be injected into untrusted workers."""


class Deadlock(SimError):
    """Event queue drained while work was still pending (protocol bug)."""


# --- scenario / CLI -------------------------------------------------------

class ScenarioError(MarketError):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ValidationError(ScenarioError):
    pass
