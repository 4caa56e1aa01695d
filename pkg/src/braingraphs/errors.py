"""Exception hierarchy.

Every error raised by the library derives from :class:`BrainGraphError`. The
``exit_code`` attribute is what the command line maps the error to.
"""


class BrainGraphError(Exception):
    exit_code = 1


class ValidationError(BrainGraphError):
    """Input or configuration is invalid."""


class ConstantSignal(ValidationError):
    def __init__(self, roi, label=None):
        self.roi = roi
        self.label = label
        name = f" ({label})" if label is not None else ""
        super().__init__(f"ROI {roi}{name} has zero variance")


class DegenerateRetention(ValidationError):
    def __init__(self, roi, retained, minimum):
        self.roi = roi
        self.retained = retained
        super().__init__(
            f"ROI {roi} retains {retained} samples after thresholding (< {minimum})"
        )


class ZeroVariance(ValidationError):
    def __init__(self, message="input sequence is constant", pair=None):
        self.pair = pair
        if pair is not None:
            message = f"{message} (ROI pair {pair[0]}, {pair[1]})"
        super().__init__(message)


class LagTooLarge(ValidationError):
    def __init__(self, lag, length):
        self.lag = lag
        self.length = length
        super().__init__(f"|lag| = {abs(lag)} exceeds T - 3 = {length - 3}")


class NoPositiveEdges(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class MissingPearsonView(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, line, col, token):
        self.line = line
        self.col = col
        self.token = token
        super().__init__(f"cannot parse {token!r} at line {line}, column {col}")


class NonRectangular(ValidationError):
    pass


class NonFinite(ValidationError):
    def __init__(self, coords):
        self.coords = list(coords)
        shown = ", ".join(f"(line {r}, col {c})" for r, c in self.coords[:5])
        more = "" if len(self.coords) <= 5 else f" and {len(self.coords) - 5} more"
        super().__init__(f"non-finite values at {shown}{more}")


class ClassTooSmall(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class MisalignedSettings(ValidationError):
    pass


class SingularSystem(BrainGraphError):
    pass


class SerializationOverflow(BrainGraphError):
    pass


class StageError(BrainGraphError):
    """Wraps a stage failure with subject and stage context."""

    def __init__(self, subject_id, stage, cause):
        self.subject_id = subject_id
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"subject {subject_id!r}, stage {stage!r}: {cause}")


class PartialFailure(BrainGraphError):
    exit_code = 2


class IoError(BrainGraphError):
    exit_code = 3
