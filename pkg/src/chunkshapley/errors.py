"""Exception types shared across the package."""


class ChunkShapleyError(Exception):
    """Base class for errors raised by this package."""


class TransportError(ChunkShapleyError):
    """Backend unreachable, timed out, or returned a server-side failure (retryable)."""


class SizingError(ChunkShapleyError):
    """Input does not fit the context budget even after left-truncation (non-retryable)."""


class CapabilityError(ChunkShapleyError):
    """Backend lacks a required capability (e.g. control-token logit access)."""


class BackendDataError(ChunkShapleyError):
    """Backend returned malformed data (non-finite logprobs, wrong shapes)."""


class StubFixtureMissing(ChunkShapleyError):
    """Deterministic stub has no scripted response for the requested prompt."""


class ShortSelectionError(ChunkShapleyError):
    """Backend emitted fewer selection tokens than packed candidates.

    The partial decisions parsed so far are attached for diagnostics.
    """

    def __init__(self, expected: int, partial):
        self.expected = expected
        self.partial = partial
        got = len(partial.decisions)
        super().__init__(f"expected {expected} selection tokens, backend emitted {got}")


class MarkerCollisionError(ValueError):
    """Content embeds a control-marker string, which would make serialized streams ambiguous."""


class CheckerError(ChunkShapleyError):
    """Syntax checker could not run (infrastructure failure, not a parse failure)."""


class GameSizeError(ValueError):
    """Game exceeds the enumeration guard (2^K subsets or K! permutations)."""


class LabelingError(ChunkShapleyError):
    """A labeling stage failed for one instance; carries the stage tag and instance id."""

    def __init__(self, instance_id: str, stage: str, message: str):
        self.instance_id = instance_id
        self.stage = stage
        super().__init__(f"instance {instance_id!r} failed at stage {stage!r}: {message}")
