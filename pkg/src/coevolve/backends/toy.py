"""Desk-scale trainable world: templated arithmetic questions by difficulty level.

The generator's only decision is which difficulty level to ask about; the
solver's decision, per level, is which procedure to apply.  Procedure 0 is
correct.  The others are systematic slips that shift the true answer by a
fixed, level-independent offset, so wrong answers are deterministic and
several samples can agree on the same wrong value.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import RejectedInputError
from ..grpo import CategoricalPolicy
from .base import Generation, GeneratorBackend, SolverBackend

CHALLENGER_STATE = "challenger"

# Slip offsets applied by distractor procedures 1, 2, ... (off-by-one, sign, carry).
SLIP_OFFSETS = (1, -1, 2, -2, 10, -10, 3, -3, 20, -20, 5, -5)


@dataclass(frozen=True)
class Template:
    text: str
    oracle: Callable[[int, int, int], int]

    @property
    def pattern(self) -> re.Pattern:
        escaped = re.escape(self.text)
        for name in ("a", "b", "c"):
            escaped = escaped.replace(re.escape("{" + name + "}"), rf"(?P<{name}>-?\d+)")
        return re.compile(f"^{escaped}$")


TEMPLATES = (
    Template(
        "A farmer has {a} apples and buys {b} more apples at the market ; "
        "how many apples does the farmer have now ?",
        lambda a, b, c: a + b,
    ),
    Template(
        "A train travels {a} kilometres every hour for {b} hours without stopping ; "
        "how many kilometres has the train travelled in total ?",
        lambda a, b, c: a * b,
    ),
    Template(
        "A warehouse stores {a} crates with {b} boxes in each crate and ships out {c} boxes ; "
        "how many boxes remain in the warehouse ?",
        lambda a, b, c: a * b - c,
    ),
    Template(
        "Find the remainder when the product of {a} and {b} is increased by {c} "
        "and the result is then divided by 7 .",
        lambda a, b, c: (a * b + c) % 7,
    ),
    Template(
        "Compute the sum of the squares of {a} and {b} minus the square of {c} , "
        "writing the final result as a single integer .",
        lambda a, b, c: a * a + b * b - c * c,
    ),
    Template(
        "Evaluate the expression {a} times {b} times {c} modulo 13 and report "
        "the least non-negative residue as your answer .",
        lambda a, b, c: (a * b * c) % 13,
    ),
)


def solver_state(level: int) -> str:
    return f"level{level}"


@dataclass(frozen=True)
class ToyQuestion:
    level: int
    operands: tuple[int, int, int]
    text: str

    def raw(self, answer: int) -> str:
        return f"<question>{self.text}</question>\n\\boxed{{{answer}}}"


@dataclass(frozen=True)
class ToyWorld:
    """Difficulty levels, their procedures, and the ground-truth oracle.

    ``procedures_per_level[k]`` counts the correct procedure plus distractors.
    ``solver_skill`` / ``solver_lure`` set the untrained solver's logits for
    the correct procedure and for the first (most plausible) distractor.
    """

    procedures_per_level: tuple[int, ...] = (2, 3, 5, 8)
    solver_skill: tuple[float, ...] = (1.0, 0.5, 0.0, -0.5)
    solver_lure: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    operand_low: int = 2
    operand_high: int = 99
    _patterns: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = self.levels
        if not 1 <= d <= len(TEMPLATES):
            raise RejectedInputError(f"levels must lie in 1..{len(TEMPLATES)}")
        if any(p < 2 or p > len(SLIP_OFFSETS) + 1 for p in self.procedures_per_level):
            raise RejectedInputError(f"procedures per level must lie in 2..{len(SLIP_OFFSETS) + 1}")
        if len(self.solver_skill) != d or len(self.solver_lure) != d:
            raise RejectedInputError("solver_skill and solver_lure need one entry per level")
        if not 0 <= self.operand_low <= self.operand_high:
            raise RejectedInputError("operand range is empty")
        object.__setattr__(self, "_patterns", tuple(t.pattern for t in TEMPLATES[:d]))

    @property
    def levels(self) -> int:
        return len(self.procedures_per_level)

    def render(self, level: int, operands: Sequence[int]) -> ToyQuestion:
        a, b, c = (int(x) for x in operands)
        return ToyQuestion(level, (a, b, c), TEMPLATES[level].text.format(a=a, b=b, c=c))

    def parse(self, text: str) -> Optional[ToyQuestion]:
        text = text.strip()
        for level, pat in enumerate(self._patterns):
            match = pat.match(text)
            if match:
                groups = match.groupdict()
                ops = tuple(int(groups.get(k, 0) or 0) for k in ("a", "b", "c"))
                return ToyQuestion(level, ops, text)
        return None

    def oracle(self, question: ToyQuestion) -> int:
        return TEMPLATES[question.level].oracle(*question.operands)

    def apply(self, question: ToyQuestion, procedure: int) -> int:
        if not 0 <= procedure < self.procedures_per_level[question.level]:
            raise RejectedInputError(f"procedure {procedure} does not exist at level {question.level}")
        truth = self.oracle(question)
        return truth if procedure == 0 else truth + SLIP_OFFSETS[procedure - 1]

    def true_answer(self, question_text: str) -> Optional[str]:
        q = self.parse(question_text)
        return None if q is None else str(self.oracle(q))

    def initial_challenger_policy(self) -> CategoricalPolicy:
        return CategoricalPolicy({CHALLENGER_STATE: np.zeros(self.levels)})

    def initial_solver_policy(self) -> CategoricalPolicy:
        table = {}
        for k, p in enumerate(self.procedures_per_level):
            vec = np.zeros(p)
            vec[0] = self.solver_skill[k]
            vec[1] = self.solver_lure[k]
            table[solver_state(k)] = vec
        return CategoricalPolicy(table)

    def solver_accuracy(self, policy: CategoricalPolicy) -> np.ndarray:
        """Probability of the correct procedure at each level."""
        return np.array([policy.probs(solver_state(k))[0] for k in range(self.levels)])


def toy_sample_questions(
    world: ToyWorld, policy: CategoricalPolicy, n: int, rng: np.random.Generator
) -> list[tuple[str, tuple[tuple[str, int], ...], float]]:
    """Sample ``n`` questions: a level per question from the policy, then operands."""
    if n < 1:
        raise RejectedInputError("n must be >= 1")
    logp = policy.log_probs(CHALLENGER_STATE)
    if logp.size != world.levels:
        raise RejectedInputError("challenger policy action count does not match the world's levels")
    levels = rng.choice(world.levels, size=n, p=np.exp(logp))
    operands = rng.integers(world.operand_low, world.operand_high + 1, size=(n, 3))
    out = []
    for level, ops in zip(levels.tolist(), operands):
        q = world.render(level, ops)
        out.append((q.raw(world.oracle(q)), ((CHALLENGER_STATE, level),), float(logp[level])))
    return out


def toy_sample_answers(
    world: ToyWorld, policy: CategoricalPolicy, question: str | ToyQuestion, m: int, rng: np.random.Generator
) -> list[tuple[str, tuple[tuple[str, int], ...], float]]:
    """Sample ``m`` answers: one procedure per answer from the level's softmax."""
    q = world.parse(question) if isinstance(question, str) else question
    if q is None or not 0 <= q.level < world.levels:
        raise RejectedInputError(f"question does not belong to a known level: {question!r}")
    state = solver_state(q.level)
    logp = policy.log_probs(state)
    procedures = rng.choice(logp.size, size=m, p=np.exp(logp))
    return [
        (f"The answer is \\boxed{{{world.apply(q, proc)}}}", ((state, proc),), float(logp[proc]))
        for proc in procedures.tolist()
    ]


class ToyChallenger(GeneratorBackend):
    trainable = True

    def __init__(self, world: ToyWorld):
        self.world = world

    def sample_questions(self, n, rng, policy=None):
        if policy is None:
            raise RejectedInputError("the toy challenger needs a policy")
        return [Generation(*g) for g in toy_sample_questions(self.world, policy, n, rng)]


class ToySolver(SolverBackend):
    trainable = True

    def __init__(self, world: ToyWorld):
        self.world = world

    def sample_answers(self, question, m, rng, policy=None):
        if policy is None:
            raise RejectedInputError("the toy solver needs a policy")
        return [Generation(*g) for g in toy_sample_answers(self.world, policy, question, m, rng)]
