"""HTTP client for a text-embedding endpoint.

Wire format: ``POST {"texts": [...]}`` answered by ``{"vectors": [[...], ...]}``.
"""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import httpx
import numpy as np

from .core import DataError, EmbeddingRecord, KINDS

ENDPOINT_ENV = "TMETA_EMBED_ENDPOINT"

logger = logging.getLogger(__name__)


class EndpointError(RuntimeError):
    """The embedding endpoint failed or answered with something unusable."""


def resolve_endpoint(flag: str | None) -> str | None:
    return flag or os.environ.get(ENDPOINT_ENV) or None


def _post(client: httpx.Client, endpoint: str, texts: list[str], retries: int, backoff: float):
    last = None
    for attempt in range(retries + 1):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = client.post(endpoint, json={"texts": texts})
        except httpx.HTTPError as exc:
            last = f"network error: {exc}"
            continue
        if resp.status_code >= 500:
            last = f"HTTP {resp.status_code}"
            continue
        if not 200 <= resp.status_code < 300:
            raise EndpointError(f"{endpoint} answered HTTP {resp.status_code}")
        try:
            vectors = resp.json()["vectors"]
        except (ValueError, KeyError, TypeError):
            raise EndpointError(f"{endpoint} returned a malformed body") from None
        if len(vectors) != len(texts):
            raise EndpointError(f"{endpoint} returned {len(vectors)} vectors for {len(texts)} texts")
        return vectors
    raise EndpointError(f"{endpoint} failed after {retries + 1} attempts ({last})")


def fetch_embeddings(texts: Sequence[tuple[str, str, str]], endpoint: str, *,
                     dim: int | None = None, batch_size: int = 16, max_inflight: int = 4,
                     retries: int = 3, backoff: float = 0.05, timeout: float = 30.0,
                     transport: httpx.BaseTransport | None = None) -> list[EmbeddingRecord]:
    """Embed ``(name, kind, description)`` triples through ``endpoint``.

    Output order follows input order regardless of how batches complete.
    Vectors are stored exactly as returned (cast to float32, which is what the
    corpus format holds).
    """
    for i, (name, kind, text) in enumerate(texts):
        if kind not in KINDS:
            raise DataError(f"item {i} ({name!r}): unknown kind {kind!r}")
        if not text or not text.strip():
            raise DataError(f"item {i} ({name!r}): empty description")
    if not texts:
        return []
    batches = [list(texts[i:i + batch_size]) for i in range(0, len(texts), batch_size)]
    with httpx.Client(timeout=timeout, transport=transport) as client:
        with ThreadPoolExecutor(max_workers=max(1, max_inflight)) as pool:
            futures = [pool.submit(_post, client, endpoint, [t for _, _, t in b], retries, backoff)
                       for b in batches]
            results = [f.result() for f in futures]
    records = []
    for batch, vectors in zip(batches, results):
        for (name, kind, _), vec in zip(batch, vectors):
            v = np.asarray(vec, dtype=np.float32)
            if dim is None:
                dim = v.shape[0] if v.ndim == 1 else -1
            if v.ndim != 1 or v.shape[0] != dim:
                raise EndpointError(f"vector for {name!r} has shape {v.shape}, expected ({dim},)")
            records.append(EmbeddingRecord(name, kind, v))
    logger.info("embedded %d texts in %d batches", len(records), len(batches))
    return records
