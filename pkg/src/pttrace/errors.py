"""Exception hierarchy shared by all pttrace modules."""


class PtError(Exception):
    """Base class for every error raised by pttrace."""


# trace model
class SchemaMismatch(PtError, ValueError):
    pass


class MalformedPayload(PtError, ValueError):
    pass


# recorder
class InvalidPattern(PtError, ValueError):
    pass


class InvalidConfig(PtError, ValueError):
    pass


class AlreadyRecording(PtError, RuntimeError):
    pass


class AlreadyStopped(PtError, RuntimeError):
    pass


class FlushFailure(PtError, OSError):
    pass


# trace files
class TraceFormatError(PtError):
    pass


class TruncatedFile(TraceFormatError):
    pass


class BadMagic(TraceFormatError):
    pass


class UnsupportedVersion(BadMagic):
    pass


class UnknownTracepointId(TraceFormatError):
    pass


# runtime
class RuntimeFault(PtError):
    pass


class DuplicateNodeName(RuntimeFault, ValueError):
    pass


class UnknownNode(RuntimeFault, LookupError):
    pass


class InvalidPeriod(RuntimeFault, ValueError):
    pass


class UnknownService(RuntimeFault, LookupError):
    pass


class InactiveLifecycleNode(RuntimeFault):
    pass


class IllegalTransition(RuntimeFault):
    pass


class NoNodes(RuntimeFault):
    pass


# analysis
class InconsistentTrace(PtError):
    pass


class UnknownTimer(PtError, LookupError):
    pass


# orchestration
class LaunchError(PtError):
    pass


class ParseError(LaunchError, ValueError):
    pass


class SchemaError(LaunchError, ValueError):
    pass


class SpawnFailure(LaunchError, OSError):
    pass


# bench
class CellMismatch(PtError, ValueError):
    pass


class EmptyInput(PtError, ValueError):
    pass
