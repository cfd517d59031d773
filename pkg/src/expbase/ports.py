"""JSON-over-HTTP clients for the optional external services.

All external services (embedding, summarizer, planner) are disabled by
default; endpoints come from environment variables only.
"""

from __future__ import annotations

import json
import os
import threading
import time
import urllib.error
import urllib.request
from typing import Any, Protocol, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyText, ExpBaseError

ENV_EMBEDDING_URL = "EXPBASE_EMBEDDING_URL"
ENV_SUMMARIZER_URL = "EXPBASE_SUMMARIZER_URL"
ENV_PLANNER_URL = "EXPBASE_PLANNER_URL"


class ServiceUnavailable(ExpBaseError):
    pass


class JsonService(Protocol):
    def post(self, payload: dict[str, Any]) -> dict[str, Any]: ...


class JsonHttpClient:
    """POST a JSON document, read a JSON document back.

    At most ``max_in_flight`` requests run concurrently per client.
    """

    def __init__(self, url: str, timeout: float = 30.0, retries: int = 2, max_in_flight: int = 4, backoff: float = 0.5):
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)

    @classmethod
    def from_env(cls, var: str, **kwargs) -> "JsonHttpClient | None":
        url = os.environ.get(var)
        return cls(url, **kwargs) if url else None

    def post(self, payload: dict[str, Any]) -> dict[str, Any]:
        body = json.dumps(payload).encode("utf-8")
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
            try:
                with self._slots, urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except (urllib.error.URLError, TimeoutError, ConnectionError, json.JSONDecodeError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * (2 ** attempt))
        raise ServiceUnavailable(f"{self.url}: {last}")


class EmbeddingServiceClient:
    """Remote embedder with the same contract as :func:`expbase.textmodel.embed_text`."""

    def __init__(self, service: JsonService, dim: int = 256):
        self.service = service
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        for t in texts:
            if not t or not t.strip():
                raise EmptyText("cannot embed empty text")
        resp = self.service.post({"texts": list(texts)})
        vecs = np.asarray(resp.get("vectors", []), dtype=np.float64)
        if vecs.shape != (len(texts), self.dim):
            raise DimensionMismatch(f"expected {(len(texts), self.dim)}, got {vecs.shape}")
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return vecs / norms
