"""Backend interfaces for question generators and answer solvers."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..grpo import CategoricalPolicy


@dataclass(frozen=True)
class Generation:
    """A sampled text plus what a trainable backend needs for GRPO."""

    text: str
    action_path: tuple[tuple[str, int], ...] = ()
    logprob: float = 0.0


class GeneratorBackend(ABC):
    trainable: bool = False

    @abstractmethod
    def sample_questions(
        self, n: int, rng: np.random.Generator, policy: Optional[CategoricalPolicy] = None
    ) -> list[Generation]:
        """Return exactly ``n`` raw generations."""


class SolverBackend(ABC):
    trainable: bool = False

    @abstractmethod
    def sample_answers(
        self, question: str, m: int, rng: np.random.Generator, policy: Optional[CategoricalPolicy] = None
    ) -> list[Generation]:
        """Return exactly ``m`` answers to ``question``."""
