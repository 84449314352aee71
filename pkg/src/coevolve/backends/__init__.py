"""Generator and solver backends."""

from .base import Generation, GeneratorBackend, SolverBackend
from .endpoint import EndpointChallenger, EndpointConfig, EndpointSolver, RetryPolicy, endpoint_sample
from .prompts import render_prompts
from .toy import (
    ToyChallenger,
    ToySolver,
    ToyWorld,
    toy_sample_answers,
    toy_sample_questions,
)

__all__ = [
    "Generation",
    "GeneratorBackend",
    "SolverBackend",
    "EndpointChallenger",
    "EndpointConfig",
    "EndpointSolver",
    "RetryPolicy",
    "endpoint_sample",
    "render_prompts",
    "ToyChallenger",
    "ToySolver",
    "ToyWorld",
    "toy_sample_answers",
    "toy_sample_questions",
]
