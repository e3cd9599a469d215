"""Exception hierarchy shared across the pipeline.

Every error raised on purpose derives from :class:`FallDetError`; the CLI maps
those to exit code 1 and prints ``type(err).__name__`` as the error code.
"""


class FallDetError(Exception):
    """Base class for domain errors."""


# -- documents / codecs ------------------------------------------------------

class MalformedDocument(FallDetError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: {reason}")


class InvariantViolation(FallDetError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: {reason}")


# -- simulation --------------------------------------------------------------

class InfeasibleRatio(FallDetError):
    pass


# -- transport ---------------------------------------------------------------

class OutOfOrderSample(FallDetError):
    pass


class FinalFlushFailed(FallDetError):
    pass


class ChannelError(FallDetError):
    """A request or its response was lost in transit."""


class Forbidden(FallDetError):
    pass


class DuplicateMeta(FallDetError):
    pass


class StoreFailure(FallDetError):
    pass


class MissingMeta(FallDetError):
    pass


class MissingChunk(FallDetError):
    def __init__(self, index: int, recording_id: str = ""):
        self.index = index
        super().__init__(f"MissingChunk({index})" + (f" in {recording_id}" if recording_id else ""))


class ProtocolError(FallDetError):
    pass


# -- preprocessing -----------------------------------------------------------

class EmptyRecording(FallDetError):
    pass


class UnpairedSignal(FallDetError):
    pass


class TooShort(FallDetError):
    pass


class TooFewSamples(FallDetError):
    pass


# -- models / evaluation -----------------------------------------------------

class SingleClassTraining(FallDetError):
    pass


class NonFiniteLoss(FallDetError):
    pass


class ShapeMismatch(FallDetError):
    pass


class MalformedModelFile(FallDetError):
    pass


class EmptyInput(FallDetError):
    pass


class SingleClass(FallDetError):
    pass


# -- detector ----------------------------------------------------------------

class NoContacts(FallDetError):
    pass


class SinkUnavailable(FallDetError):
    pass
