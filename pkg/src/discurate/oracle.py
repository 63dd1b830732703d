"""Oracle client: prompt rendering, validation, retries, mock and HTTP backends.

An "oracle" is anything that completes a rendered prompt (optionally with
images) to text. Production use goes through a chat-completions endpoint;
tests and the bundled fixture run a deterministic mock that resolves
requests by content digest with optional rule fallbacks.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from .util import file_digest

logger = logging.getLogger(__name__)

TOKEN_ENV_VAR = "DISCURATE_ORACLE_TOKEN"
MAX_GENERATION_TOKENS = 1024
DEFAULT_MAX_IN_FLIGHT = 8

YES = "yes"
NO = "no"

_SLOT_RE = re.compile(r"\[\[([^\[\]]+)\]\]")
_ALPHA_TOKEN_RE = re.compile(r"[A-Za-z]+")

# Viewpoint-dependent words forbidden in view-independent text, plus clock
# positions ("at 3 o'clock").
BANNED_VIEW_TERMS = ("front", "back", "behind", "left", "right")
_CLOCK_RE = re.compile(r"\b\d{1,2}\s*o'?\s?clock\b", re.IGNORECASE)


class OracleError(Exception):
    pass


class TemplateError(OracleError):
    pass


class MockOracleMissingError(OracleError):
    """Raised when a mock gets an unscripted digest and has no fallback."""


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt text with [[Slot]] placeholders."""

    name: str
    body: str
    forbids_view_terms: bool = False

    def slots(self) -> list[str]:
        seen: list[str] = []
        for m in _SLOT_RE.finditer(self.body):
            if m.group(1) not in seen:
                seen.append(m.group(1))
        return seen

    def render(self, bindings: Mapping[str, str]) -> str:
        missing = [s for s in self.slots() if s not in bindings]
        if missing:
            raise TemplateError(
                f"template {self.name!r} missing bindings for {missing}")
        out = self.body
        for slot in self.slots():
            out = out.replace(f"[[{slot}]]", str(bindings[slot]))
        leftover = _SLOT_RE.search(out)
        if leftover:
            raise TemplateError(
                f"template {self.name!r} left unresolved slot "
                f"{leftover.group(0)!r}")
        return out


@dataclass(frozen=True)
class OracleRequest:
    """A rendered prompt plus the data that identifies it for mocking."""

    template: str
    text: str
    bindings: tuple[tuple[str, str], ...] = ()
    image_paths: tuple[str, ...] = ()
    max_tokens: int = MAX_GENERATION_TOKENS

    @classmethod
    def from_template(cls, template: PromptTemplate,
                      bindings: Mapping[str, str] | None = None,
                      image_paths: Sequence[str | Path] = (),
                      max_tokens: int = MAX_GENERATION_TOKENS
                      ) -> "OracleRequest":
        bindings = dict(bindings or {})
        return cls(
            template=template.name,
            text=template.render(bindings),
            bindings=tuple(sorted((k, str(v)) for k, v in bindings.items())),
            image_paths=tuple(str(p) for p in image_paths),
            max_tokens=max_tokens,
        )


def request_digest(request: OracleRequest) -> str:
    """Stable digest: template name, sorted bindings, image content hashes."""
    h = hashlib.sha256()
    h.update(request.template.encode("utf-8"))
    for k, v in sorted(request.bindings):
        h.update(b"\x1f")
        h.update(k.encode("utf-8"))
        h.update(b"\x1e")
        h.update(v.encode("utf-8"))
    for p in request.image_paths:
        h.update(b"\x1d")
        h.update(file_digest(p).encode("ascii"))
    return h.hexdigest()


class Oracle(Protocol):
    def complete(self, request: OracleRequest) -> str: ...


MockRule = Callable[[OracleRequest], "str | None"]


class MockOracle:
    """Deterministic mock resolving requests by digest.

    Looks up the request digest in the scripted table first, then asks the
    rule fallback; an unscripted digest without a fallback answer is an
    error so silent nonsense cannot leak into artifacts.
    """

    def __init__(self, script: Mapping[str, str] | None = None,
                 fallback: MockRule | None = None) -> None:
        self.script = dict(script or {})
        self.fallback = fallback
        self.calls = 0

    @classmethod
    def from_jsonl(cls, path: str | Path,
                   fallback: MockRule | None = None) -> "MockOracle":
        """Load a scripted table from JSONL lines {"digest":..,"response":..}."""
        script: dict[str, str] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            script[rec["digest"]] = rec["response"]
        return cls(script, fallback)

    def complete(self, request: OracleRequest) -> str:
        self.calls += 1
        digest = request_digest(request)
        if digest in self.script:
            return self.script[digest]
        if self.fallback is not None:
            answer = self.fallback(request)
            if answer is not None:
                return answer
        raise MockOracleMissingError(
            f"no scripted response for digest {digest} "
            f"(template {request.template!r}) and no fallback answer")


class HttpOracle:
    """Chat-completions client; bearer token read from the environment."""

    def __init__(self, base_url: str, model: str, *,
                 token_env: str = TOKEN_ENV_VAR,
                 timeout_s: float = 120.0, session=None) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.token_env = token_env
        self.timeout_s = timeout_s
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    def complete(self, request: OracleRequest) -> str:
        token = os.environ.get(self.token_env)
        if not token:
            raise OracleError(
                f"oracle token not set; export {self.token_env}")
        content: list[dict] = [{"type": "text", "text": request.text}]
        for path in request.image_paths:
            data = base64.b64encode(Path(path).read_bytes()).decode("ascii")
            suffix = Path(path).suffix.lstrip(".").lower() or "png"
            content.append({
                "type": "image_url",
                "image_url": {"url": f"data:image/{suffix};base64,{data}"},
            })
        payload = {
            "model": self.model,
            "max_tokens": request.max_tokens,
            "messages": [{"role": "user", "content": content}],
        }
        try:
            resp = self.session.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {token}"},
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            body = resp.json()
            return body["choices"][0]["message"]["content"]
        except OracleError:
            raise
        except Exception as exc:  # transport/shape errors become OracleError
            raise OracleError(f"oracle transport failure: {exc}") from exc


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3


@dataclass
class OracleResponse:
    text: str
    ok: bool
    attempts: int
    error: str | None = None
    latency_s: float = 0.0  # in-memory diagnostic; never serialized


def first_alpha_token(text: str) -> str | None:
    m = _ALPHA_TOKEN_RE.search(text)
    return m.group(0).lower() if m else None


def validate_yes_no(text: str) -> str | None:
    """'yes'/'no' from the first alphabetic token, else None (malformed)."""
    tok = first_alpha_token(text)
    if tok in (YES, NO):
        return tok
    return None


def find_view_term(text: str) -> str | None:
    """The first banned viewpoint-dependent token in the text, if any."""
    lowered = text.lower()
    for tok in re.findall(r"[a-z]+", lowered):
        if tok in BANNED_VIEW_TERMS:
            return tok
    m = _CLOCK_RE.search(lowered)
    if m:
        return m.group(0)
    return None


def default_validator(template: PromptTemplate) -> Callable[[str], bool] | None:
    if template.forbids_view_terms:
        return lambda text: find_view_term(text) is None
    return None


def call(oracle: Oracle, request: OracleRequest, *,
         validator: Callable[[str], bool] | None = None,
         policy: RetryPolicy | None = None) -> OracleResponse:
    """Run a request with retries on transport errors and validation
    failures; the last failure is reported when attempts run out."""
    if policy is None:
        policy = RetryPolicy()
    last_error: str | None = None
    start = time.monotonic()
    for attempt in range(1, policy.max_attempts + 1):
        try:
            text = oracle.complete(request)
        except OracleError as exc:
            last_error = str(exc)
            logger.warning("oracle attempt %d/%d failed: %s",
                           attempt, policy.max_attempts, exc)
            continue
        if validator is not None and not validator(text):
            last_error = f"validation rejected response: {text[:80]!r}"
            logger.warning("oracle attempt %d/%d invalid: %s",
                           attempt, policy.max_attempts, last_error)
            continue
        return OracleResponse(text=text, ok=True, attempts=attempt,
                              latency_s=time.monotonic() - start)
    return OracleResponse(text="", ok=False,
                          attempts=policy.max_attempts, error=last_error,
                          latency_s=time.monotonic() - start)


def call_many(oracle: Oracle, requests: Sequence[OracleRequest], *,
              validator: Callable[[str], bool] | None = None,
              policy: RetryPolicy | None = None,
              max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
              ) -> list[OracleResponse]:
    """Bounded-concurrency fan-out; responses in request order."""
    if not requests:
        return []
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        futures = [
            pool.submit(call, oracle, r, validator=validator, policy=policy)
            for r in requests
        ]
        return [f.result() for f in futures]
