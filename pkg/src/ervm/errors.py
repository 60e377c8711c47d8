"""Error types shared across the recorder, replayer and debugger."""


class ErvmError(Exception):
    pass


class CorruptLog(ErvmError):
    """Trace file violates the format or its monotonicity rules."""


class ImageMismatch(ErvmError):
    """Kernel or disk image hash does not match the trace header."""


class GuestLayoutError(ErvmError):
    """Guest task table failed its plausibility checks."""


class Divergence(ErvmError):
    """Replay observed something that contradicts the log. Fatal; reported
    at the first occurrence."""

    def __init__(self, message, at_seq=None, expected=None, actual=None,
                 nearest_checkpoint_icount=None):
        super().__init__(message)
        self.at_seq = at_seq
        self.expected = expected  # the Event the log promised, if any
        self.actual = actual or {}
        self.nearest_checkpoint_icount = nearest_checkpoint_icount

    def report(self):
        return {
            "message": str(self),
            "at_seq": self.at_seq,
            "expected": self.expected.to_dict() if self.expected is not None else None,
            "actual": self.actual,
            "nearest_checkpoint_icount": self.nearest_checkpoint_icount,
        }
