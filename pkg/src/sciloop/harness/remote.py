"""Proposal generator backed by a chat-completion style HTTP endpoint."""

from __future__ import annotations

import json
import logging
import os
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass

from sciloop.core import Rng, Solution, SolutionKind, UsageError
from sciloop.operators import GenerationContext, GenerationError

log = logging.getLogger(__name__)

SYSTEM_PROMPT = (
    "You propose one improved candidate solution. The user message is a JSON "
    "envelope with the operator, objective, parent, trajectory, references and "
    "hints. Reply with the candidate payload only."
)

TRANSIENT_STATUS = {408, 425, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class RemoteModelSpec:
    """Where and how to call the model. The token is read from ``token_env`` at call time."""

    endpoint: str
    model: str
    token_env: str
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 0.5

    def __post_init__(self):
        if self.max_retries < 0:
            raise UsageError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise UsageError("timeout must be positive")
        if not self.endpoint.startswith(("http://", "https://")):
            raise UsageError(f"endpoint must be an http(s) URL, got {self.endpoint!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RemoteModelSpec:
        keys = ("endpoint", "model", "token_env", "timeout", "max_retries", "backoff")
        return cls(**{k: d[k] for k in keys if k in d})


def parse_reply(body: bytes) -> str:
    """First text block of an OpenAI- or Anthropic-shaped completion."""
    data = json.loads(body)
    if "choices" in data:
        content = data["choices"][0]["message"]["content"]
        if isinstance(content, list):
            content = next(b["text"] for b in content if b.get("type") == "text")
    else:
        content = next(b["text"] for b in data["content"] if b.get("type") == "text")
    if not isinstance(content, str) or not content.strip():
        raise ValueError("empty text block")
    return content.strip()


class RemoteGenerator:
    def __init__(self, spec: RemoteModelSpec, kind: SolutionKind = SolutionKind.TEXT,
                 sleep=time.sleep):
        self.spec = spec
        self.kind = SolutionKind(kind)
        self._sleep = sleep
        self._token()

    def _token(self) -> str:
        from sciloop.harness.factory import ConfigError

        token = os.environ.get(self.spec.token_env)
        if not token:
            raise ConfigError(f"environment variable {self.spec.token_env} is not set")
        return token

    def request_body(self, context: GenerationContext, rng: Rng) -> dict:
        return {
            "model": self.spec.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": json.dumps(context.to_envelope(), sort_keys=True)},
            ],
            "seed": rng.integers(0, 2**31),
        }

    def generate(self, context: GenerationContext, rng: Rng) -> Solution:
        data = json.dumps(self.request_body(context, rng)).encode()
        headers = {"Content-Type": "application/json",
                   "Authorization": f"Bearer {self._token()}"}
        last = "no attempt made"
        for attempt in range(self.spec.max_retries + 1):
            if attempt:
                self._sleep(self.spec.backoff * 2 ** (attempt - 1))
            req = urllib.request.Request(self.spec.endpoint, data=data, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.spec.timeout) as resp:
                    body = resp.read()
            except urllib.error.HTTPError as exc:
                last = f"HTTP {exc.code}"
                if exc.code in TRANSIENT_STATUS:
                    continue
                raise GenerationError(f"remote model rejected the request: {last}") from exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            try:
                payload = parse_reply(body)
            except (ValueError, KeyError, IndexError, StopIteration, TypeError) as exc:
                log.warning("malformed model response: %r", body[:2000])
                raise GenerationError(f"malformed model response ({exc!r})") from exc
            try:
                return Solution(payload, self.kind)
            except UsageError as exc:
                raise GenerationError(f"model proposal is not a valid solution: {exc}") from exc
        raise GenerationError(f"remote model failed after {self.spec.max_retries + 1} attempts: {last}")
