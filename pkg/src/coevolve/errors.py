"""Exception hierarchy shared across the package."""


class CoevolveError(Exception):
    """Base class for all errors raised by this package."""


class RejectedInputError(CoevolveError, ValueError):
    """An argument violated an operation's preconditions."""


class DivergenceUndefinedError(CoevolveError, ValueError):
    """KL divergence requested where q has zero mass on p's support."""


class PipelineWiringError(CoevolveError):
    """Pipeline stages were connected inconsistently (e.g. missing accuracy)."""


class ConfigError(CoevolveError):
    """Invalid configuration or missing credentials."""


class TransportError(CoevolveError):
    """A remote endpoint kept failing after all retries."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class EmptyCurriculumError(CoevolveError):
    """Curation kept zero questions; the loop cannot continue."""


class PhaseError(CoevolveError):
    """A loop phase failed; carries phase/step context and a resumable checkpoint."""

    def __init__(self, message, phase=None, iteration=None, step=None, checkpoint=None):
        super().__init__(message)
        self.phase = phase
        self.iteration = iteration
        self.step = step
        self.checkpoint = checkpoint
