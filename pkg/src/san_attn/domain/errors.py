"""Exception hierarchy for san_attn.

Every error raised by the library derives from SanError so that the CLI can
map it onto the exit-code contract in one place.
"""


class SanError(Exception):
    """Base class for all san_attn errors."""


class ShapeError(SanError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(SanError, ValueError):
    """A softmax row has every entry masked."""


class ConfigurationError(SanError, ValueError):
    """Model, policy or run configuration is inconsistent."""


class StateError(SanError, RuntimeError):
    """Incremental decoding state does not match the requested step."""


class CapacityError(SanError, RuntimeError):
    """A decode session ran past the model's max_len."""


class InputError(SanError, ValueError):
    """Token ids or corpus records are invalid."""


class FormatError(SanError, ValueError):
    """A file does not follow its declared on-disk format."""


class RangeError(SanError, ValueError):
    """An argument lies outside its permitted range."""


class SupportError(SanError, ValueError):
    """KL divergence is undefined because q has zero mass where p does not."""


class NumericError(SanError, FloatingPointError):
    """A kernel produced inf or NaN."""


class TrainingError(SanError, RuntimeError):
    """Training produced a non-finite loss.

    Attributes:
        step: 1-based optimizer step at which the loss became non-finite.
        losses: Finite losses recorded before that step.
    """

    def __init__(self, message: str, step: int, losses: list[float] | None = None) -> None:
        super().__init__(f"{message} (step {step})")
        self.step = step
        self.losses = losses or []


class BenchmarkError(SanError, RuntimeError):
    """The benchmark workload cannot be timed reliably or its outputs drift."""
