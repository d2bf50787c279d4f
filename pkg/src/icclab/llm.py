"""Zero-shot clustering against a chat-completion HTTP endpoint.

The client speaks the common /v1/chat/completions JSON shape with a single
user message (no system prompt), retries rate limits and server errors with
exponential backoff, and parses the first flat integer list out of the
response text.  Unit tests run entirely against in-process mock transports;
the API key is read from the ICC_API_KEY environment variable and is never
written to logs or transcripts.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np

from .codec import MalformedOutput
from .episodes import Episode
from .evaluation import EvalReport, clustering_accuracy, evaluate

API_KEY_ENV = "ICC_API_KEY"
_REDACTED = "***"

PROMPT_TEMPLATE = (
    "Cluster the following data into {c} clusters. "
    "Only output the cluster labels for each point as a list of integers. "
    "Data: {data} Labels:"
)


class HttpError(RuntimeError):
    """Non-retryable HTTP failure, or a retryable one after retries ran out."""

    def __init__(self, status: int, detail: str = ""):
        msg = f"HTTP {status}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.status = status


class AuthFailure(HttpError):
    """401/403; the only error that aborts a whole evaluation run."""


class RateLimited(HttpError):
    """429 still returned after every retry was spent."""

    def __init__(self, retries: int):
        super().__init__(429, f"rate limited after {retries} retries")
        self.retries = retries


class Timeout(RuntimeError):
    """Request exceeded the configured timeout; not retried."""


class NoList(MalformedOutput):
    """Response contains no flat bracketed list of in-range integers."""


class WrongLength(MalformedOutput):
    """Integer list found but its length differs from the point count."""

    def __init__(self, k: int, m: int):
        super().__init__(f"expected {m} labels, found {k}", found=k)
        self.k = k


class NonInteger(MalformedOutput):
    """Bracketed lists found, but every one has a non-integer entry."""


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings; api_key=None defers to ICC_API_KEY at call time."""

    base_url: str
    model_name: str
    api_key: str | None = None
    temperature: float = 0.0
    timeout: float = 30.0
    max_retries: int = 3
    backoff_initial: float = 0.5
    backoff_multiplier: float = 2.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if self.backoff_initial < 0:
            raise ValueError("backoff_initial must be >= 0")
        if self.backoff_multiplier < 1:
            raise ValueError("backoff_multiplier must be >= 1")

    def resolved_key(self) -> str:
        if self.api_key is not None:
            return self.api_key
        return os.environ.get(API_KEY_ENV, "")

    def public_dict(self) -> dict:
        """Loggable form: the key is replaced by a marker, never the value."""
        return {
            "base_url": self.base_url,
            "model_name": self.model_name,
            "api_key": _REDACTED if self.resolved_key() else None,
            "temperature": self.temperature,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "backoff_initial": self.backoff_initial,
            "backoff_multiplier": self.backoff_multiplier,
        }


def _render_points(points: np.ndarray) -> str:
    inner = ", ".join(
        "[" + ", ".join(f"{float(v):.2f}" for v in row) + "]" for row in points
    )
    return f"[{inner}]"


def build_prompt(ep: Episode) -> str:
    """Instruction + 2-decimal double list of points, ending in 'Labels:'."""
    return PROMPT_TEMPLATE.format(
        c=ep.spec.num_clusters, data=_render_points(ep.points)
    )


def _dense_relabel(values: list[int]) -> np.ndarray:
    ids: dict[int, int] = {}
    out = [ids.setdefault(v, len(ids)) for v in values]
    return np.asarray(out, dtype=np.int64)


def parse_labels(text: str, m: int, c: int) -> np.ndarray:
    """Extract m cluster labels from free-form response text.

    Scans left to right for flat bracketed lists (descending into nested
    brackets, so an echoed `[[1.00], ...]` data block is skipped over its
    float entries). The first list whose entries are all integers within
    [0, max(9, c)) decides: returned if it has exactly m entries, else
    WrongLength. With no such list, NonInteger if some flat list existed,
    otherwise NoList. Labels are remapped to 0..k-1 in first-appearance
    order, which is harmless under permutation-invariant scoring.
    """
    if m <= 0:
        raise ValueError(f"m must be positive, got {m}")
    if not isinstance(text, str):
        raise NoList("response is not text")
    hi = max(9, c)
    saw_flat = False
    pos = 0
    while True:
        i = text.find("[", pos)
        if i == -1:
            break
        j = text.find("]", i + 1)
        if j == -1:
            break
        nxt = text.find("[", i + 1)
        if nxt != -1 and nxt < j:
            pos = nxt
            continue
        saw_flat = True
        tokens = [t.strip() for t in text[i + 1 : j].split(",")]
        try:
            values = [int(t) for t in tokens]
        except ValueError:
            pos = j + 1
            continue
        if all(0 <= v < hi for v in values):
            if len(values) != m:
                raise WrongLength(len(values), m)
            return _dense_relabel(values)
        pos = j + 1
    if saw_flat:
        raise NonInteger("no bracketed list parses as in-range integers")
    raise NoList("no bracketed list in response")


@dataclass
class ChatResult:
    text: str
    retries: int
    status: int


def chat_complete(
    cfg: EndpointConfig,
    prompt: str,
    transport: httpx.BaseTransport | None = None,
    _sleep=time.sleep,
) -> ChatResult:
    """POST one single-user-message completion request and return the text.

    429 and 5xx responses are retried up to cfg.max_retries times with
    exponential backoff; timeouts and other status codes are not retried.
    `transport` injects an in-process mock for tests.
    """
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    payload = {
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
    }
    headers = {"Content-Type": "application/json"}
    key = cfg.resolved_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    delay = cfg.backoff_initial
    with httpx.Client(transport=transport, timeout=cfg.timeout) as client:
        for attempt in range(cfg.max_retries + 1):
            try:
                resp = client.post(url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                raise Timeout(str(exc)) from exc
            status = resp.status_code
            if status == 200:
                try:
                    text = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise HttpError(200, "malformed completion body") from exc
                return ChatResult(text=text, retries=attempt, status=200)
            if status == 429 or status >= 500:
                if attempt < cfg.max_retries:
                    _sleep(delay)
                    delay *= cfg.backoff_multiplier
                    continue
                if status == 429:
                    raise RateLimited(cfg.max_retries)
                raise HttpError(status, resp.text[:200])
            if status in (401, 403):
                raise AuthFailure(status, "authentication failed")
            raise HttpError(status, resp.text[:200])
    raise AssertionError("unreachable")


def zero_shot_eval(
    cfg: EndpointConfig,
    episodes: list[Episode],
    name: str | None = None,
    out_dir: str | Path | None = None,
    threads: int = 4,
    transport: httpx.BaseTransport | None = None,
    _sleep=time.sleep,
) -> EvalReport:
    """Prompt -> completion -> parse -> accuracy over a list of episodes.

    Requests run on a bounded thread pool but results are scored in input
    order. Transport errors and unparseable responses count as failed
    episodes (accuracy 0); only AuthFailure aborts the run. When out_dir is
    given, a JSONL transcript (one request/response record per episode,
    config header with the key redacted) is written alongside the report.
    """
    name = name or cfg.model_name
    prompts = [build_prompt(ep) for ep in episodes]

    def fetch(prompt: str):
        try:
            return chat_complete(cfg, prompt, transport=transport, _sleep=_sleep)
        except AuthFailure:
            raise
        except (HttpError, Timeout, httpx.HTTPError) as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(fetch, prompts))

    records = []
    scored: list[np.ndarray | MalformedOutput] = []
    for idx, (ep, prompt, outcome) in enumerate(zip(episodes, prompts, outcomes)):
        rec = {
            "index": idx,
            "df": ep.spec.df_label,
            "c": ep.spec.num_clusters,
            "dim": ep.spec.dim,
            "prompt": prompt,
        }
        if isinstance(outcome, Exception):
            rec.update(response=None, labels=None, accuracy=0.0, error=str(outcome))
            scored.append(MalformedOutput(f"transport failure: {outcome}"))
        else:
            rec["response"] = outcome.text
            rec["retries"] = outcome.retries
            try:
                labels = parse_labels(outcome.text, ep.num_points, ep.spec.num_clusters)
                acc = clustering_accuracy(labels, ep.labels)
                rec.update(labels=[int(v) for v in labels], accuracy=acc, error=None)
                scored.append(labels)
            except MalformedOutput as exc:
                rec.update(labels=None, accuracy=0.0, error=str(exc))
                scored.append(exc)
        records.append(rec)

    results = iter(scored)

    def replay(ep: Episode) -> np.ndarray:
        res = next(results)
        if isinstance(res, MalformedOutput):
            raise res
        return res

    report = evaluate(replay, episodes, name=name)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"transcript-{name}.jsonl"
        with open(path, "w") as fh:
            fh.write(json.dumps({"config": cfg.public_dict()}) + "\n")
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    return report
