"""Chat-completions client for driving remote model endpoints.

Remote backends are generation-only.  Requests fan out over a thread pool
capped at ``max_in_flight``; results come back in request order.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import httpx

from ..errors import ConfigError, TransportError
from .base import Generation, GeneratorBackend, SolverBackend
from .prompts import render_prompts

log = logging.getLogger(__name__)

_RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: float = 0.5  # seconds; doubles per attempt


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "default"
    api_key_source: str = "COEVOLVE_API_KEY"
    temperature: float = 1.0
    top_p: float = 0.99
    max_in_flight: int = 8
    timeout: float = 120.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ConfigError("top_p must lie in (0, 1]")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.retry.max_attempts < 1:
            raise ConfigError("retry.max_attempts must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "EndpointConfig":
        data = dict(data)
        retry = data.pop("retry", None)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown endpoint keys: {sorted(unknown)}")
        if retry is not None:
            data["retry"] = RetryPolicy(**retry)
        return cls(**data)

    def api_key(self) -> str:
        key = os.environ.get(self.api_key_source)
        if not key:
            raise ConfigError(f"environment variable {self.api_key_source} is not set")
        return key


def _chat_once(client: httpx.Client, config: EndpointConfig, key: str, messages: list, limiter=None) -> str:
    body = {
        "model": config.model_name,
        "messages": messages,
        "temperature": config.temperature,
        "top_p": config.top_p,
        "n": 1,
    }
    url = config.base_url.rstrip("/") + "/chat/completions"
    status = None
    for attempt in range(1, config.retry.max_attempts + 1):
        try:
            if limiter is None:
                resp = client.post(url, json=body, headers={"Authorization": f"Bearer {key}"})
            else:
                with limiter:
                    resp = client.post(url, json=body, headers={"Authorization": f"Bearer {key}"})
            status = resp.status_code
            if status == 200:
                return resp.json()["choices"][0]["message"]["content"]
            if status not in _RETRY_STATUS:
                break
            log.warning("endpoint returned %s (attempt %d/%d)", status, attempt, config.retry.max_attempts)
        except httpx.TransportError as exc:
            status = None
            log.warning("transport error %s (attempt %d/%d)", exc, attempt, config.retry.max_attempts)
        if attempt < config.retry.max_attempts:
            time.sleep(config.retry.backoff * 2 ** (attempt - 1))
    raise TransportError(f"chat completion failed after {attempt} attempt(s), last status {status}", status=status)


def endpoint_sample(
    config: EndpointConfig,
    system_prompt: str,
    user_prompt: str,
    n: int,
    limiter: Optional[threading.BoundedSemaphore] = None,
) -> list[str]:
    """Issue ``n`` single-completion requests and return the texts in order.

    ``limiter`` caps requests in flight across concurrent callers sharing it.
    """
    if n <= 0:
        return []
    key = config.api_key()
    messages = [
        {"role": "system", "content": system_prompt},
        {"role": "user", "content": user_prompt},
    ]
    with httpx.Client(timeout=config.timeout) as client:
        with ThreadPoolExecutor(max_workers=min(config.max_in_flight, n)) as pool:
            futures = [pool.submit(_chat_once, client, config, key, messages, limiter) for _ in range(n)]
            return [f.result() for f in futures]


class EndpointChallenger(GeneratorBackend):
    trainable = False

    def __init__(self, config: EndpointConfig, limiter: Optional[threading.BoundedSemaphore] = None):
        self.config = config
        self.limiter = limiter or threading.BoundedSemaphore(config.max_in_flight)

    def sample_questions(self, n, rng=None, policy=None):
        system, user = render_prompts("challenger")
        return [Generation(t) for t in endpoint_sample(self.config, system, user, n, self.limiter)]


class EndpointSolver(SolverBackend):
    trainable = False

    def __init__(self, config: EndpointConfig, limiter: Optional[threading.BoundedSemaphore] = None):
        self.config = config
        self.limiter = limiter or threading.BoundedSemaphore(config.max_in_flight)

    def sample_answers(self, question, m, rng=None, policy=None):
        system, user = render_prompts("solver", question)
        return [Generation(t) for t in endpoint_sample(self.config, system, user, m, self.limiter)]
