"""Exceptions raised by the simulator and the reasons recorded for counted drops."""

# Drop reasons recorded in MetricsReport.dropped
LOST = "lost"
LINK_BROKEN = "link_broken"
DELIVERY_TIMEOUT = "delivery_timeout"
QUEUE_OVERFLOW = "queue_overflow"
STALE_REPLY = "stale_reply"
BOGUS_REPLY = "bogus_reply"
DUPLICATE_REPLY = "duplicate_reply"
UNKNOWN_COMMUNITY = "unknown_community"
UNREACHABLE_MEMBER = "unreachable_member"
NO_FRIEND_AVAILABLE = "no_friend_available"
NO_ROUTE = "no_route"
NOT_MEMBER = "not_member"
OP_REJECTED = "op_rejected"


class HamanetError(Exception):
    """Base class for every error the simulator raises.

    `reason` names the drop counter an error lands in when it is raised
    while handling a packet inside the event loop.
    """

    reason = "error"


# model_core
class MalformedPath(HamanetError):
    reason = NO_ROUTE


# service_fabric
class DuplicateArt(HamanetError):
    pass


class DuplicateCulture(HamanetError):
    pass


class MissingSlot(HamanetError):
    pass


class LayerMismatch(HamanetError):
    pass


class UnknownArt(HamanetError):
    pass


class UnknownCulture(HamanetError):
    pass


class DuplicatePending(HamanetError):
    pass


# community_protocol
class PrerequisiteUnmet(HamanetError):
    pass


class UnknownCommunity(HamanetError):
    reason = UNKNOWN_COMMUNITY


class NoSuchCommunity(HamanetError):
    reason = UNKNOWN_COMMUNITY


# routing
class NotAMember(HamanetError):
    reason = NOT_MEMBER


class OpRejected(HamanetError):
    reason = OP_REJECTED


class NoFriendAvailable(HamanetError):
    reason = NO_FRIEND_AVAILABLE


# services
class NoSuchFile(HamanetError):
    pass


class TransferFailed(HamanetError):
    pass


# scenario handling
class ScenarioInvalid(HamanetError):
    pass


class ParseError(ScenarioInvalid):
    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class ValidationError(ScenarioInvalid):
    """Carries every problem found, each as (field_path, message)."""

    def __init__(self, issues):
        self.issues = list(issues)
        summary = "; ".join(f"{path}: {msg}" for path, msg in self.issues)
        super().__init__(f"{len(self.issues)} validation error(s): {summary}")
