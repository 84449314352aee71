"""Group Relative Policy Optimization for categorical policies.

Rewards within a group of responses to one prompt are z-scored into
advantages; the policy is then moved along the gradient of the clipped
surrogate plus a KL penalty against the sampling-time snapshot.  Policies
here are tabular softmax policies (one logit vector per state), so the KL
term and all gradients are computed in closed form.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DivergenceUndefinedError, RejectedInputError

__all__ = [
    "ResponseSample",
    "RolloutGroup",
    "GrpoConfig",
    "CategoricalPolicy",
    "LossReport",
    "compute_advantages",
    "clipped_surrogate_loss",
    "kl_categorical",
    "grpo_objective",
    "grpo_step",
]

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ResponseSample:
    """One sampled response.

    ``action_path`` lists the ``(state, action)`` decisions that produced the
    response; its log-probability is the sum over those decisions.
    """

    text: str
    action_path: tuple[tuple[str, int], ...]
    logprob_old: float

    def __post_init__(self):
        if not math.isfinite(self.logprob_old) or self.logprob_old > 0:
            raise RejectedInputError(f"logprob_old must be finite and <= 0, got {self.logprob_old}")


@dataclass
class RolloutGroup:
    prompt_id: str
    responses: list[ResponseSample]
    rewards: list[float]

    def __post_init__(self):
        if len(self.responses) != len(self.rewards):
            raise RejectedInputError(
                f"group {self.prompt_id}: {len(self.responses)} responses but {len(self.rewards)} rewards"
            )
        if len(self.responses) < 2:
            raise RejectedInputError(f"group {self.prompt_id}: need at least 2 responses")

    @property
    def size(self) -> int:
        return len(self.responses)


@dataclass(frozen=True)
class GrpoConfig:
    eps_norm: float = 1e-6
    clip_eps: float = 0.2
    kl_coeff: float = 1e-2
    learning_rate: float = 1e-6
    group_size: int = 4

    def __post_init__(self):
        if not self.eps_norm > 0:
            raise RejectedInputError("eps_norm must be > 0")
        if not 0 < self.clip_eps < 1:
            raise RejectedInputError("clip_eps must lie in (0, 1)")
        if not self.kl_coeff >= 0:
            raise RejectedInputError("kl_coeff must be >= 0")
        if not self.learning_rate > 0:
            raise RejectedInputError("learning_rate must be > 0")
        if self.group_size < 2:
            raise RejectedInputError("group_size must be >= 2")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max()
    return shifted - math.log(np.exp(shifted).sum())


class CategoricalPolicy:
    """Tabular softmax policy: one logit vector per state.

    Instances are treated as values; :meth:`updated` returns a new policy.
    """

    def __init__(self, logits: Mapping[str, Iterable[float]]):
        table = {}
        for state, vec in logits.items():
            arr = np.array(vec, dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0:
                raise RejectedInputError(f"state {state!r}: logits must be a non-empty vector")
            if not np.all(np.isfinite(arr)):
                raise RejectedInputError(f"state {state!r}: logits must be finite")
            arr.setflags(write=False)
            table[str(state)] = arr
        if not table:
            raise RejectedInputError("policy needs at least one state")
        self._logits = table

    @classmethod
    def uniform(cls, action_counts: Mapping[str, int]) -> "CategoricalPolicy":
        return cls({s: np.zeros(n) for s, n in action_counts.items()})

    @property
    def states(self) -> list[str]:
        return list(self._logits)

    def logits(self, state: str) -> np.ndarray:
        try:
            return self._logits[state]
        except KeyError:
            raise RejectedInputError(f"unknown state {state!r}") from None

    def n_actions(self, state: str) -> int:
        return self.logits(state).size

    def log_probs(self, state: str) -> np.ndarray:
        return _log_softmax(self.logits(state))

    def probs(self, state: str) -> np.ndarray:
        return np.exp(self.log_probs(state))

    def log_prob_path(self, path: Sequence[tuple[str, int]]) -> float:
        total = 0.0
        for state, action in path:
            lp = self.log_probs(state)
            if not 0 <= action < lp.size:
                raise RejectedInputError(f"action {action} out of range for state {state!r}")
            total += lp[action]
        return float(total)

    def sample(self, state: str, rng: np.random.Generator, size: int | None = None):
        p = self.probs(state)
        return rng.choice(p.size, size=size, p=p)

    def updated(self, deltas: Mapping[str, np.ndarray]) -> "CategoricalPolicy":
        return CategoricalPolicy({s: v + deltas.get(s, 0.0) for s, v in self._logits.items()})

    def to_dict(self) -> dict[str, list[float]]:
        return {s: v.tolist() for s, v in self._logits.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Sequence[float]]) -> "CategoricalPolicy":
        return cls(data)

    def digest(self) -> str:
        h = hashlib.sha256()
        for state in sorted(self._logits):
            h.update(state.encode())
            h.update(b"\0")
            h.update(np.ascontiguousarray(self._logits[state], dtype="<f8").tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, CategoricalPolicy):
            return NotImplemented
        return self._logits.keys() == other._logits.keys() and all(
            np.array_equal(v, other._logits[s]) for s, v in self._logits.items()
        )

    def __repr__(self):
        return f"CategoricalPolicy({self.to_dict()!r})"


@dataclass
class LossReport:
    surrogate: float
    kl: float
    total: float
    group_count: int

    def to_dict(self) -> dict:
        return {
            "surrogate": self.surrogate,
            "kl": self.kl,
            "total": self.total,
            "group_count": self.group_count,
        }


def compute_advantages(rewards: Sequence[float], eps_norm: float = 1e-6) -> np.ndarray:
    """Z-score rewards within a group using the population standard deviation.

    A constant-reward group returns all zeros.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise RejectedInputError("rewards must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(r)):
        raise RejectedInputError("rewards must be finite")
    if not eps_norm > 0:
        raise RejectedInputError("eps_norm must be > 0")
    if r.max() == r.min():
        return np.zeros_like(r)
    centered = r - r.mean()
    return centered / (r.std() + eps_norm)


def _clip_terms(ratios: np.ndarray, advantages: np.ndarray, clip_eps: float):
    unclipped = ratios * advantages
    clipped = np.clip(ratios, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    return unclipped, clipped


def clipped_surrogate_loss(ratios: Sequence[float], advantages: Sequence[float], clip_eps: float) -> float:
    """Negative mean of min(ratio * A, clip(ratio) * A); no KL term."""
    rho = np.asarray(ratios, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    if rho.shape != adv.shape or rho.ndim != 1 or rho.size == 0:
        raise RejectedInputError("ratios and advantages must be equal-length non-empty vectors")
    if np.any(~(rho > 0)):
        raise RejectedInputError("ratios must be strictly positive")
    unclipped, clipped = _clip_terms(rho, adv, clip_eps)
    return float(-np.minimum(unclipped, clipped).mean())


def kl_categorical(p: Sequence[float], q: Sequence[float]) -> float:
    """KL(p || q) for discrete distributions, with 0 * log(0/q) = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise RejectedInputError("p and q must be vectors of equal length")
    if np.any(p < 0) or np.any(q < 0):
        raise RejectedInputError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > _SUM_TOL or abs(q.sum() - 1.0) > _SUM_TOL:
        raise RejectedInputError("p and q must each sum to 1")
    support = p > 0
    if np.any(q[support] == 0):
        raise DivergenceUndefinedError("q has zero mass where p is positive")
    return float(max(0.0, np.sum(p[support] * (np.log(p[support]) - np.log(q[support])))))


def grpo_objective(
    policy: CategoricalPolicy,
    groups: Sequence[RolloutGroup],
    config: GrpoConfig,
    reference: CategoricalPolicy | None = None,
) -> tuple[LossReport, dict[str, np.ndarray]]:
    """Evaluate the GRPO loss and its exact gradient w.r.t. every logit.

    The surrogate is the mean over groups of each group's clipped loss.  The
    KL term averages KL(policy || reference) over every state visit in the
    batch.  ``reference`` defaults to ``policy`` itself, which is the
    snapshot that produced the rollouts when called from :func:`grpo_step`.
    """
    if not groups:
        raise RejectedInputError("need at least one rollout group")
    reference = policy if reference is None else reference
    grad = {s: np.zeros(policy.n_actions(s)) for s in policy.states}
    logp_cache = {s: policy.log_probs(s) for s in policy.states}

    surrogate = 0.0
    visits: dict[str, int] = {}
    n_groups = len(groups)
    for group in groups:
        adv = compute_advantages(group.rewards, config.eps_norm)
        size = group.size
        rho = np.empty(size)
        for i, resp in enumerate(group.responses):
            lp = 0.0
            for state, action in resp.action_path:
                if state not in logp_cache:
                    raise RejectedInputError(f"unknown state {state!r}")
                row = logp_cache[state]
                if not 0 <= action < row.size:
                    raise RejectedInputError(f"action {action} out of range for state {state!r}")
                lp += row[action]
                visits[state] = visits.get(state, 0) + 1
            rho[i] = math.exp(lp - resp.logprob_old)
        unclipped, clipped = _clip_terms(rho, adv, config.clip_eps)
        surrogate += -np.minimum(unclipped, clipped).mean() / n_groups

        # d/dtheta of min(): the unclipped branch when it is the min or the
        # ratio sits inside the clip range; zero otherwise.
        lo, hi = 1.0 - config.clip_eps, 1.0 + config.clip_eps
        for i, resp in enumerate(group.responses):
            inside = lo <= rho[i] <= hi
            if not (inside or unclipped[i] <= clipped[i]):
                continue
            coeff = -adv[i] * rho[i] / (size * n_groups)
            if coeff == 0.0:
                continue
            for state, action in resp.action_path:
                g = -np.exp(logp_cache[state]) * coeff
                g[action] += coeff
                grad[state] += g

    kl_total = 0.0
    n_visits = sum(visits.values())
    beta = config.kl_coeff
    for state, count in visits.items():
        logp = logp_cache[state]
        logq = reference.log_probs(state)
        if logq.size != logp.size:
            raise RejectedInputError(f"state {state!r}: reference has a different action count")
        p = np.exp(logp)
        f = logp - logq
        kl_s = float(np.dot(p, f))
        w = count / n_visits
        kl_total += w * kl_s
        if beta:
            grad[state] += beta * w * p * (f - kl_s)

    report = LossReport(
        surrogate=float(surrogate),
        kl=float(kl_total),
        total=float(surrogate + beta * kl_total),
        group_count=n_groups,
    )
    return report, grad


def grpo_step(
    policy: CategoricalPolicy,
    groups: Sequence[RolloutGroup],
    config: GrpoConfig,
    reference: CategoricalPolicy | None = None,
) -> tuple[CategoricalPolicy, LossReport]:
    """One plain gradient-descent step on the GRPO loss.

    Returns the new policy and the loss report evaluated before the step.
    """
    reference = policy if reference is None else reference
    report, grad = grpo_objective(policy, groups, config, reference)
    lr = config.learning_rate
    return policy.updated({s: -lr * g for s, g in grad.items()}), report
