"""Vote sources: in-memory lists, JSONL replay files and an HTTP sampler.

Every source is an iterator of labels delivered in acquisition order and
raises :class:`~mvcert.mmc.VoteStreamError` when it fails for good.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import urllib.error
import urllib.request
from collections import deque
from collections.abc import Iterable, Iterator, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from string import Template
from typing import Any

from .mmc import VoteStreamError

MISSING = "∅"
_BOX = "\\boxed{"


@dataclass(frozen=True)
class CanonicalAnswer:
    raw_text: str
    label: str


def _boxed_groups(text: str) -> list[str | None]:
    """Contents of top-level ``\\boxed{...}`` groups; ``None`` marks an unclosed one."""
    out: list[str | None] = []
    i = text.find(_BOX)
    while i != -1:
        start = i + len(_BOX)
        depth = 1
        j = start
        while j < len(text) and depth:
            if text[j] == "{":
                depth += 1
            elif text[j] == "}":
                depth -= 1
            j += 1
        if depth:
            out.append(None)
            break
        out.append(text[start:j - 1])
        i = text.find(_BOX, j)
    return out


def canonicalize(raw_text: str) -> CanonicalAnswer:
    """Label = whitespace-normalized content of the last ``\\boxed{}`` group.

    Groups are matched by counting braces. If there is no group, or the last
    one never closes, the label is the missing-answer sentinel ``"∅"``.
    """
    groups = _boxed_groups(raw_text)
    if not groups or groups[-1] is None:
        return CanonicalAnswer(raw_text, MISSING)
    return CanonicalAnswer(raw_text, " ".join(groups[-1].split()))


class _End:
    def __repr__(self) -> str:
        return "END"


#: Returned by :func:`next_vote` once a source is exhausted.
END = _End()


def next_vote(source: Iterator[str]):
    """Next label from ``source``, or :data:`END`."""
    return next(source, END)


class MemorySource:
    def __init__(self, labels: Iterable):
        self._labels = list(labels)
        self._i = 0

    def __iter__(self) -> MemorySource:
        return self

    def __next__(self):
        if self._i >= len(self._labels):
            raise StopIteration
        self._i += 1
        return self._labels[self._i - 1]


class JsonlSource:
    """One JSON object per line with a string field ``"answer"``; blank lines are skipped."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = None
        self._lineno = 0

    def __iter__(self) -> JsonlSource:
        return self

    def __next__(self) -> str:
        if self._fh is None:
            try:
                self._fh = self.path.open(encoding="utf-8")
            except OSError as exc:
                raise VoteStreamError(f"cannot open {self.path}: {exc}") from exc
        for line in self._fh:
            self._lineno += 1
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise VoteStreamError(f"{self.path}:{self._lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or not isinstance(obj.get("answer"), str):
                raise VoteStreamError(f"{self.path}:{self._lineno}: missing string field 'answer'")
            return obj["answer"]
        self._fh.close()
        raise StopIteration


@dataclass(frozen=True)
class HttpSamplerSpec:
    """Configuration of a generic completion endpoint.

    ``prompt_template`` uses ``$name`` placeholders filled from
    ``prompt_vars``, which leaves LaTeX braces alone. ``text_path`` is a
    dotted path into the JSON response; integer parts index lists.
    """

    endpoint_url: str
    prompt_template: str
    decode_params: Mapping[str, Any] = field(default_factory=dict)
    timeout_ms: int = 30_000
    max_retries: int = 3
    cache_dir: str | None = None
    text_path: str = "text"
    token_env: str | None = None
    prompt_vars: Mapping[str, Any] = field(default_factory=dict)
    backoff_s: float = 0.5
    prefetch: int = 0

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.prefetch < 0:
            raise ValueError("prefetch must be >= 0")
        if "prompt" in self.decode_params:
            raise ValueError("decode_params may not override 'prompt'")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> HttpSamplerSpec:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown http sampler keys: {sorted(unknown)}")
        return cls(**d)

    def render(self) -> str:
        return Template(self.prompt_template).substitute(self.prompt_vars)


def _transient(exc: Exception) -> bool:
    if isinstance(exc, urllib.error.HTTPError):
        return exc.code == 429 or exc.code >= 500
    return isinstance(exc, (urllib.error.URLError, TimeoutError, ConnectionError))


def _extract(obj: Any, path: str) -> str:
    for part in path.split("."):
        if isinstance(obj, list):
            obj = obj[int(part)]
        else:
            obj = obj[part]
    if not isinstance(obj, str):
        raise TypeError(f"response field {path!r} is not a string")
    return obj


class HttpSampler:
    """Draws one completion per vote from an HTTP endpoint.

    Each request is ``POST {"prompt": <rendered>, **decode_params}``. With
    ``cache_dir`` set, sample ``i`` is stored in ``<sha256(prompt)>-<i>.json``
    and later runs replay it without a request. With ``prefetch > 0`` up to
    that many future samples are requested concurrently; labels still come
    out in index order.
    """

    def __init__(self, spec: HttpSamplerSpec, max_samples: int | None = None):
        self.spec = spec
        self.prompt = spec.render()
        self.prompt_hash = hashlib.sha256(self.prompt.encode("utf-8")).hexdigest()
        self.max_samples = max_samples
        self._next_index = 0
        self._pending: deque = deque()
        self._pool = ThreadPoolExecutor(spec.prefetch) if spec.prefetch else None
        self.transcripts: list[CanonicalAnswer] = []

    def __iter__(self) -> HttpSampler:
        return self

    def _cache_path(self, index: int) -> Path | None:
        if self.spec.cache_dir is None:
            return None
        return Path(self.spec.cache_dir) / f"{self.prompt_hash}-{index:06d}.json"

    def _request(self) -> str:
        body = json.dumps({"prompt": self.prompt, **self.spec.decode_params}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.spec.token_env:
            token = os.environ.get(self.spec.token_env)
            if token is None:
                raise VoteStreamError(f"environment variable {self.spec.token_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        req = urllib.request.Request(self.spec.endpoint_url, data=body, headers=headers, method="POST")
        last: Exception | None = None
        for attempt in range(self.spec.max_retries + 1):
            if attempt:
                time.sleep(self.spec.backoff_s * 2 ** (attempt - 1))
            try:
                with urllib.request.urlopen(req, timeout=self.spec.timeout_ms / 1000.0) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                return _extract(payload, self.spec.text_path)
            except Exception as exc:  # noqa: BLE001
                last = exc
                if not _transient(exc):
                    break
        raise VoteStreamError(f"sampling request failed: {last}")

    def _fetch(self, index: int) -> CanonicalAnswer:
        path = self._cache_path(index)
        if path is not None and path.exists():
            cached = json.loads(path.read_text(encoding="utf-8"))
            return CanonicalAnswer(cached["raw"], cached["label"])
        ans = canonicalize(self._request())
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps({"raw": ans.raw_text, "label": ans.label}), encoding="utf-8")
            tmp.replace(path)
        return ans

    def _more(self) -> bool:
        return self.max_samples is None or self._next_index < self.max_samples

    def __next__(self) -> str:
        if self._pool is None:
            if not self._more():
                raise StopIteration
            ans = self._fetch(self._next_index)
            self._next_index += 1
        else:
            while len(self._pending) < self.spec.prefetch and self._more():
                self._pending.append(self._pool.submit(self._fetch, self._next_index))
                self._next_index += 1
            if not self._pending:
                raise StopIteration
            ans = self._pending.popleft().result()
        self.transcripts.append(ans)
        return ans.label

    def close(self) -> None:
        if self._pool is not None:
            for fut in self._pending:
                fut.cancel()
            self._pool.shutdown(wait=True)
            self._pool = None


def open_source(spec: str, max_samples: int | None = None) -> Iterator[str]:
    """Build a source from ``memory:a,b,a``, ``jsonl:<path>`` or ``http:<config.json>``."""
    kind, sep, arg = spec.partition(":")
    if not sep:
        raise ValueError(f"vote source {spec!r} lacks a kind prefix (memory:, jsonl:, http:)")
    if kind == "memory":
        return MemorySource([x.strip() for x in arg.split(",")] if arg.strip() else [])
    if kind == "jsonl":
        if not arg:
            raise ValueError("jsonl: source needs a path")
        return JsonlSource(arg)
    if kind == "http":
        try:
            cfg = json.loads(Path(arg).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read http sampler config {arg!r}: {exc}") from None
        return HttpSampler(HttpSamplerSpec.from_dict(cfg), max_samples=max_samples)
    raise ValueError(f"unknown vote source kind {kind!r}")
