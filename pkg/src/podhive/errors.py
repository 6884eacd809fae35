"""Error taxonomy shared across the engine.

Every error carries a stable machine-readable ``code`` so the API layer can
map failures to HTTP responses without string matching. The runtime errors
raised by evaluated code travel separately as (ename, evalue) pairs inside
kernel replies; ``KernelEvalError`` is the client-side wrapper.
"""

from __future__ import annotations


class PodhiveError(Exception):
    """Base class; ``code`` doubles as the wire-visible error name."""

    code = "Internal"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_payload(self) -> dict:
        payload = {"code": self.code, "message": self.message}
        if self.details:
            payload["details"] = {k: _plain(v) for k, v in self.details.items()}
        return payload


def _plain(value):
    if isinstance(value, (list, tuple, set, frozenset)):
        return sorted(str(v) for v in value) if isinstance(value, (set, frozenset)) else [str(v) for v in value]
    return value if isinstance(value, (int, float, bool, str, type(None))) else str(value)


# --- tree model ---------------------------------------------------------

class UnknownNode(PodhiveError):
    code = "UnknownNode"


class UnknownParent(PodhiveError):
    code = "UnknownParent"


class ParentIsPod(PodhiveError):
    code = "ParentIsPod"


class IndexOutOfRange(PodhiveError):
    code = "IndexOutOfRange"


class WouldCreateCycle(PodhiveError):
    code = "WouldCreateCycle"


class NoSuchSegment(PodhiveError):
    code = "NoSuchSegment"


class EscapesRoot(PodhiveError):
    code = "EscapesRoot"


class DuplicateSiblingName(PodhiveError):
    code = "DuplicateSiblingName"


class InvalidName(PodhiveError):
    code = "InvalidName"


class FlagConflict(PodhiveError):
    code = "FlagConflict"


class RootImmutable(PodhiveError):
    code = "RootImmutable"


# --- namespace rules ----------------------------------------------------

class ParseFailure(PodhiveError):
    code = "ParseFailure"


class ReexportNotFound(PodhiveError):
    code = "ReexportNotFound"


class NameCollision(PodhiveError):
    code = "NameCollision"


class NotVisible(PodhiveError):
    code = "NotVisible"


# --- kernel protocol ----------------------------------------------------

class SerializationFailure(PodhiveError):
    code = "SerializationFailure"


class MalformedFrame(PodhiveError):
    code = "MalformedFrame"


class ProtocolError(PodhiveError):
    code = "ProtocolError"


class UnknownMsgId(PodhiveError):
    code = "UnknownMsgId"


class Timeout(PodhiveError):
    code = "Timeout"


class TransportClosed(PodhiveError):
    code = "TransportClosed"


# --- orchestrator -------------------------------------------------------

class KernelUnavailable(PodhiveError):
    code = "KernelUnavailable"


class ReplayCycle(PodhiveError):
    code = "ReplayCycle"


class KernelEvalError(PodhiveError):
    """Evaluated code failed; ename/evalue mirror the kernel reply."""

    code = "KernelEvalError"

    def __init__(self, ename: str, evalue: str):
        super().__init__(f"{ename}: {evalue}", ename=ename, evalue=evalue)
        self.ename = ename
        self.evalue = evalue


# --- repo store ---------------------------------------------------------

class FormatVersionMismatch(PodhiveError):
    code = "FormatVersionMismatch"


class InvalidTree(PodhiveError):
    code = "InvalidTree"


class IoFailure(PodhiveError):
    code = "IoFailure"


class NameClash(PodhiveError):
    code = "NameClash"


class UnparseableDiff(PodhiveError):
    code = "UnparseableDiff"


class UnsupportedKernel(PodhiveError):
    code = "UnsupportedKernel"


class RepoLocked(PodhiveError):
    code = "RepoLocked"


# --- call-graph importer ------------------------------------------------

class SchemaError(PodhiveError):
    code = "SchemaError"


class DanglingEdge(PodhiveError):
    code = "DanglingEdge"


class Unreachable(PodhiveError):
    code = "Unreachable"


class EmissionInvariantViolation(PodhiveError):
    code = "EmissionInvariantViolation"
