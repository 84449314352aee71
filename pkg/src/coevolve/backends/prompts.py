"""Chat prompt templates for the generator and solver roles."""

from __future__ import annotations

from typing import Optional

from ..errors import RejectedInputError

SOLVER_SYSTEM = "Please reason step by step, and put your final answer within \\boxed{}."

CHALLENGER_SYSTEM = (
    "You are an expert competition-math problem setter. FIRST, in your private scratch-pad, "
    "think step-by-step to design a brand-new, non-trivial problem. The problem could come from "
    "any field of mathematics, including but not limited to algebra, geometry, number theory, "
    "combinatorics, prealgebra, probability, statistics, and calculus. Aim for a difficulty such "
    "that fewer than 30% of advanced high-school students could solve it. Avoid re-using textbook "
    "clich\u00e9s or famous contest problems.\n"
    "THEN, without revealing any of your private thoughts, output exactly the following two blocks:\n"
    "\n"
    "<question>\n"
    "{The full problem statement on one or more lines}\n"
    "</question>\n"
    "\n"
    "\\boxed{final_answer}\n"
    "\n"
    "Do NOT output anything else\u2014no explanations, no extra markup."
)

CHALLENGER_USER = (
    "Generate one new, challenging reasoning question now. "
    "Remember to format the output exactly as instructed."
)


def render_prompts(role: str, problem: Optional[str] = None) -> tuple[str, str]:
    """Return ``(system, user)`` messages for ``role`` ("challenger" or "solver")."""
    if role == "challenger":
        if problem is not None:
            raise RejectedInputError("the challenger prompt takes no problem statement")
        return CHALLENGER_SYSTEM, CHALLENGER_USER
    if role == "solver":
        if not problem:
            raise RejectedInputError("the solver prompt needs a non-empty problem statement")
        return SOLVER_SYSTEM, problem
    raise RejectedInputError(f"unknown role {role!r}")
