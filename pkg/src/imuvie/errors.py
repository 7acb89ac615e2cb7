"""Exception hierarchy shared by every imuvie module."""


class ImuvieError(Exception):
    """Base class for all pipeline errors."""


class RecordingTooShort(ImuvieError):
    pass


class InvalidLabels(ImuvieError):
    pass


class InvalidConfig(ImuvieError):
    pass


class InjectionOutOfRange(ImuvieError):
    pass


class SeriesTooShort(ImuvieError):
    pass


class FrameOutOfRange(ImuvieError):
    pass


class NumericalError(ImuvieError):
    pass


class DegenerateDataset(ImuvieError):
    pass


class MovieTooShort(ImuvieError):
    pass


class InvalidTimeline(ImuvieError):
    pass


class NotAPickup(ImuvieError):
    pass


class AlignmentError(ImuvieError):
    pass


class InsufficientSubjects(ImuvieError):
    pass


class LeakageError(ImuvieError):
    """Raised when a cross-validation fold shares recordings between its sets."""


class CheckpointMismatch(ImuvieError):
    """Checkpoint contents disagree with the requested frame spec or format."""
