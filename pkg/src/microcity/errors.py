"""Exception hierarchy shared by every microcity subsystem."""


class MicrocityError(Exception):
    """Base class for all domain errors raised by this package."""


# --- map / geometry ---

class MalformedMap(MicrocityError):
    def __init__(self, reason, line=None):
        self.reason = reason
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"malformed map{where}: {reason}")


class UnresolvedReference(MicrocityError):
    def __init__(self, ref_id, context=""):
        self.ref_id = ref_id
        suffix = f" in {context}" if context else ""
        super().__init__(f"unresolved reference {ref_id!r}{suffix}")


class InvalidValue(MicrocityError):
    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"invalid value for {field}: {reason}")


class GeometryError(MicrocityError):
    pass


class OffMap(MicrocityError):
    pass


class UnknownLane(MicrocityError):
    def __init__(self, lane_id):
        self.lane_id = lane_id
        super().__init__(f"unknown lane {lane_id!r}")


# --- driving / simulation ---

class NoPath(MicrocityError):
    pass


class UnknownVehicle(MicrocityError):
    def __init__(self, vehicle_id):
        self.vehicle_id = vehicle_id
        super().__init__(f"unknown vehicle {vehicle_id!r}")


class ScenarioError(MicrocityError):
    pass


class InsufficientData(MicrocityError):
    pass


# --- teleoperation ---

class ProtocolError(MicrocityError):
    def __init__(self, reason):
        self.reason = reason
        super().__init__(f"protocol error: {reason}")


class SessionError(MicrocityError):
    pass


# --- telemetry / analytics ---

class SchemaError(MicrocityError):
    pass


class DigestMismatch(MicrocityError):
    def __init__(self, expected, actual, what="map"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} digest mismatch: expected {expected}, got {actual}")


class RouteMismatch(MicrocityError):
    pass


class EmptyLog(MicrocityError):
    pass


class EmptyGrid(MicrocityError):
    pass


class UsageError(MicrocityError):
    pass
