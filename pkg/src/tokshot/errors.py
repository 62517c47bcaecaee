"""Exception hierarchy shared across the package.

The split between :class:`DataError` and :class:`NumericalError` mirrors the
CLI exit-code contract: data problems (unreadable files, bad manifests,
undersized classes) exit with 2, numerical failures exit with 3.
"""


class TokshotError(Exception):
    """Base class for all package errors."""


class DataError(TokshotError):
    """Input data cannot be used (files, manifests, dataset shapes)."""


class NumericalError(TokshotError):
    """A numerical procedure failed (non-finite loss, failed gradient check)."""


class NonFiniteLossError(NumericalError):
    """The support self-classification loss became non-finite.

    Carries the inner-loop step at which the loss degenerated and, when the
    failure surfaces through the evaluation harness, the episode index.
    """

    def __init__(self, message, step=None, episode_index=None):
        super().__init__(message)
        self.step = step
        self.episode_index = episode_index
