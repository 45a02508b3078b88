"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FlowSMCError(Exception):
    """Base class for all package-specific errors."""


# --- workflow model -------------------------------------------------------

class NoMarkersError(FlowSMCError):
    """Source text contains no step-marker comment lines."""


class TooManyStepsError(FlowSMCError):
    """More step markers than the horizon allows."""


class HorizonExceededError(FlowSMCError):
    """Appending steps would push a workflow past its horizon."""


# --- priors ---------------------------------------------------------------

class MissingContextError(FlowSMCError):
    """Tabular prior has no probability row for the requested context."""


class GenerationFailedError(FlowSMCError):
    """The language-model prior failed to produce a usable step."""


class SelfCorrectionExhaustedError(FlowSMCError):
    """All self-correction attempts failed; carries the last error log."""

    def __init__(self, message: str, error_log: str = ""):
        super().__init__(message)
        self.error_log = error_log


# --- rewards --------------------------------------------------------------

class ExecutionFailedError(FlowSMCError):
    """A sandbox-backed evaluation failed to execute."""


# --- engine / refiner -----------------------------------------------------

class EmptyPoolError(FlowSMCError):
    """An operation that needs a nonempty pool received an empty one."""


class EditFailedError(FlowSMCError):
    """The edit model produced unparseable output after its retry."""


# --- oracle ---------------------------------------------------------------

class InstanceTooLargeError(FlowSMCError):
    """Trajectory space exceeds the enumeration cap."""


class UnreachablePrefixError(FlowSMCError):
    """Prefix has zero probability under the instance prior."""


class SupportMismatchError(FlowSMCError):
    """Distribution is not absolutely continuous w.r.t. the prior."""


# --- eval harness ---------------------------------------------------------

class DatasetParseError(FlowSMCError):
    """Malformed dataset file; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ShapeMismatchError(FlowSMCError):
    """Answer matrix and gold answers have incompatible shapes."""


# --- gateway --------------------------------------------------------------

class GatewayExhaustedError(FlowSMCError):
    """Transient endpoint failures persisted past the retry budget."""


class MalformedResponseError(FlowSMCError):
    """Endpoint response violates the chat-completions contract."""


class CassetteMissError(FlowSMCError):
    """Replay mode got a request whose digest is not in the cassette."""

    def __init__(self, digest: str):
        super().__init__(f"no cassette entry for request digest {digest}")
        self.digest = digest


# --- cli ------------------------------------------------------------------

class ConfigError(FlowSMCError):
    """Invalid run configuration."""
