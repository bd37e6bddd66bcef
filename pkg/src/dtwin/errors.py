"""Exception hierarchy shared by every dtwin subsystem."""


class DTwinError(Exception):
    """Base class; the CLI maps these to exit code 1 or 2."""

    #: CLI exit code when the error escapes a command
    exit_code = 2


class UserError(DTwinError):
    exit_code = 1


# twin-core
class MalformedConfig(UserError):
    pass


class MissingSection(MalformedConfig):
    pass


class DuplicateFeature(MalformedConfig):
    pass


class DuplicateTwin(UserError):
    pass


class UnknownTwin(UserError):
    pass


class UnknownFeature(UserError):
    pass


class QuarantinedTwin(DTwinError):
    pass


# mirror-protocol
class ProtocolError(DTwinError):
    pass


class UnserializableValue(ProtocolError):
    pass


class MalformedMessage(ProtocolError):
    pass


class UnsupportedVersion(MalformedMessage):
    pass


class UnknownKind(MalformedMessage):
    pass


class BindFailure(DTwinError):
    pass


class DeviceUnreachable(DTwinError):
    pass


class ConnectFailure(DTwinError):
    pass


# ml-core
class EmptyTrainingSet(UserError):
    pass


class EmptyTestSet(UserError):
    pass


class DimensionMismatch(UserError):
    pass


class NonFiniteLoss(DTwinError):
    pass


class CorruptModelFile(UserError):
    pass


class SchemaMismatch(UserError):
    pass


# data-pipeline
class MissingFile(UserError):
    pass


class HeaderMismatch(UserError):
    pass


class AllRowsMalformed(UserError):
    pass


class UnfittedPreprocessor(UserError):
    pass


class DegenerateSplit(UserError):
    pass


class InvalidRate(UserError):
    pass


# detection-service / cloud-trainer / bench
class NoServedModel(DTwinError):
    pass


class NoVerdicts(UserError):
    pass


class StoreUnavailable(DTwinError):
    pass


class StorageFailure(DTwinError):
    pass


class InsufficientData(UserError):
    pass


class FogUnreachable(DTwinError):
    pass


class StackUnavailable(DTwinError):
    pass
