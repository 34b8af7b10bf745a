"""Exception types shared across the toolchain."""


class FinledgerError(Exception):
    """Base class for all package errors."""


# --- ledger ---

class InvalidKey(FinledgerError):
    """A row-id component was empty after normalization."""


class RejectedCandidate(FinledgerError):
    """A fact candidate cannot be converted into a safe ledger row."""


class LedgerSealed(FinledgerError):
    """Mutation attempted on a sealed ledger."""


# --- ingestion ---

class EmptyInput(FinledgerError):
    """Chunking was asked to split empty source text."""


class MalformedTable(FinledgerError):
    def __init__(self, message: str, row_index: int | None = None):
        super().__init__(message)
        self.row_index = row_index


# --- grounding ---

class InvalidQuote(FinledgerError):
    """Alignment was asked to locate an empty quote."""


class VacuousMetric(FinledgerError):
    """Metric name has no core tokens left after stop-word removal."""


# --- retrieval ---

class VacuousQuery(FinledgerError):
    """Query has no tokens left after stop-word removal; the gate passes nothing."""


# --- trace engine ---

class TraceError(FinledgerError):
    """Base class for trace parsing / evaluation failures."""


class ParseError(TraceError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class UndefinedStep(TraceError):
    def __init__(self, name: str, line: int | None = None):
        super().__init__(f"identifier '{name}' used before assignment")
        self.name = name
        self.line = line


class DivisionByZero(TraceError):
    def __init__(self, step: str):
        super().__init__(f"division by zero while evaluating '{step}'")
        self.step = step


class Overflow(TraceError):
    def __init__(self, step: str):
        super().__init__(f"value overflowed while evaluating '{step}'")
        self.step = step


# --- saboteur ---

class SabotageSkip(FinledgerError):
    """Base class for per-record sabotage skips (record skipped, logged)."""


class NoViableTarget(SabotageSkip):
    """No (target, distractor) choice can produce a verifiable sabotage."""


class AmbiguousAnchor(SabotageSkip):
    """The sentence scalar appears in more than one grid cell."""


class NoNeighbor(SabotageSkip):
    """The anchored cell has no usable neighboring cell."""


class NoYearToken(SabotageSkip):
    """The query carries no 4-digit year to warp."""


class EmptyDistractorPool(SabotageSkip):
    """No distractor material from a disjoint family is available."""


class NoMutableSpan(SabotageSkip):
    """The sentence has neither a scale token nor a swappable entity."""


# --- splits / metrics ---

class UndefinedMetric(FinledgerError):
    """Metric requested over an empty evaluation set."""


class DegenerateEmbedding(FinledgerError):
    """A label embedding has zero norm."""


class UndefinedLoss(FinledgerError):
    """Every position in the loss computation is masked out."""


class ContextOverflow(FinledgerError):
    def __init__(self, tokens_over: int, chars_to_trim: int):
        super().__init__(
            f"prompt exceeds the token budget by {tokens_over} tokens "
            f"(trim roughly {chars_to_trim} characters)"
        )
        self.tokens_over = tokens_over
        self.chars_to_trim = chars_to_trim


# --- gateway / pipeline ---

class GatewayError(FinledgerError):
    """Base class for model-gateway failures."""


class SchemaViolation(GatewayError):
    """Gateway response body does not parse against the declared schema."""


class BackendUnavailable(GatewayError):
    """No backend answer exists for the request (fixture miss, connection refused)."""


class GatewayTimeout(GatewayError):
    """The backend did not answer within the allotted time."""


class ConfigError(FinledgerError):
    """Pipeline configuration is missing or malformed."""


class StageFailure(FinledgerError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
