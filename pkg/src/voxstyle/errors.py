"""Exception hierarchy shared across the package.

Every error carries a machine-readable ``category`` so the CLI and service
can report a stable code alongside the human message.
"""


class VoxstyleError(Exception):
    category = "run_error"


class InputError(VoxstyleError):
    """Caller passed something that violates an operation's precondition."""

    category = "input_error"


class FormatError(VoxstyleError):
    """A file did not match its declared binary/JSON format."""

    category = "format_error"


class FitDivergence(VoxstyleError):
    """Optimization produced a non-finite loss."""

    category = "fit_divergence"

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class EmptyRegistration(VoxstyleError):
    """No pseudo-rays could be registered; stylization cannot proceed."""

    category = "empty_registration"
