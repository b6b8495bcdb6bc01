"""HTTP client for remote scorer services.

Wire protocol, all POST, JSON bodies:

    /v1/logprobs  {request_id, image_id, region?, queries: [{prefix: [tok, ...]}]}
        -> {request_id, results: [{probs: {tok: p, ...}, terminal_p?}]}
    /v1/embed     {request_id, image_id?, region?, text?: [tok, ...]}
        -> {request_id, vector: [float, ...]}

Only identifiers cross the wire; the server owns pixel storage.  Requests
are idempotent queries, so transient failures (connection errors, timeouts,
5xx) retry with exponential backoff up to `max_retries`.  Non-retryable
statuses, malformed bodies and request_id mismatches raise TransportError
carrying the raw body.  Distributions are normalization-checked on the
client before anyone takes a log.

The client is batch-first: one /v1/logprobs call scores many prefixes, and
the engine hands it every prefix an instance needs at once.  A bounded
semaphore caps concurrent in-flight requests (default 8).
"""

from __future__ import annotations

import threading
import time
import uuid
from typing import Sequence

import numpy as np
import requests

from ..errors import NormalizationError, TransportError
from .base import Capabilities, ScorerBackend, TokenDistribution

_NORM_TOL = 1e-6


class RemoteBackend(ScorerBackend):
    def __init__(
        self,
        endpoint: str,
        capabilities: Capabilities = Capabilities(
            has_generative=True, has_contrastive=True, concurrent_safe=True
        ),
        vocabulary=None,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.25,
        max_in_flight: int = 8,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.capabilities = capabilities
        self.vocabulary = frozenset(vocabulary) if vocabulary is not None else None
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._session = session or requests.Session()

    # -- transport -----------------------------------------------------

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.endpoint}{path}"
        delay = self.backoff
        last_error: str = "no attempts made"
        last_status = None
        last_body = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._gate:
                    resp = self._session.post(url, json=payload, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code >= 500:
                    last_error = f"server error {resp.status_code}"
                    last_status, last_body = resp.status_code, resp.text
                elif resp.status_code != 200:
                    raise TransportError(
                        f"{url} returned {resp.status_code}",
                        status=resp.status_code,
                        body=resp.text,
                    )
                else:
                    try:
                        data = resp.json()
                    except ValueError as exc:
                        raise TransportError(
                            f"{url} returned unparseable JSON: {exc}", body=resp.text
                        ) from exc
                    if data.get("request_id") != payload["request_id"]:
                        raise TransportError(
                            f"{url} echoed wrong request_id", body=resp.text
                        )
                    return data
            if attempt < self.max_retries:
                time.sleep(delay)
                delay *= 2
        raise TransportError(
            f"{url} failed after {self.max_retries + 1} attempts: {last_error}",
            status=last_status,
            body=last_body,
        )

    # -- generative ----------------------------------------------------

    def next_token_distribution(self, image_id, region, prefix) -> TokenDistribution:
        return self.next_token_distributions(image_id, region, [prefix])[0]

    def next_token_distributions(
        self, image_id, region, prefixes: Sequence[tuple[str, ...]]
    ) -> list[TokenDistribution]:
        payload = {
            "request_id": uuid.uuid4().hex,
            "image_id": image_id,
            "queries": [{"prefix": list(p)} for p in prefixes],
        }
        if region is not None:
            payload["region"] = list(region)
        data = self._post("/v1/logprobs", payload)
        results = data.get("results")
        if not isinstance(results, list) or len(results) != len(prefixes):
            raise TransportError(
                f"expected {len(prefixes)} results, got "
                f"{len(results) if isinstance(results, list) else type(results).__name__}",
                body=str(data)[:2000],
            )
        out = []
        for i, res in enumerate(results):
            probs = res.get("probs")
            if not isinstance(probs, dict):
                raise TransportError(f"result #{i} has no probs", body=str(res)[:2000])
            terminal = res.get("terminal_p")
            dist = TokenDistribution(
                probs={str(k): float(v) for k, v in probs.items()},
                terminal_p=float(terminal) if terminal is not None else None,
            )
            if abs(dist.total() - 1.0) > _NORM_TOL:
                raise NormalizationError(
                    f"server distribution for prefix #{i} sums to {dist.total():.9f}"
                )
            out.append(dist)
        return out

    # -- contrastive ---------------------------------------------------

    def _embed(self, payload: dict) -> np.ndarray:
        payload["request_id"] = uuid.uuid4().hex
        data = self._post("/v1/embed", payload)
        vector = data.get("vector")
        if not isinstance(vector, list) or not vector:
            raise TransportError("embed response has no vector", body=str(data)[:2000])
        return np.asarray(vector, dtype=float)

    def embed_image(self, image_id, region) -> np.ndarray:
        payload: dict = {"image_id": image_id}
        if region is not None:
            payload["region"] = list(region)
        return self._embed(payload)

    def embed_text(self, tokens) -> np.ndarray:
        return self._embed({"text": list(tokens)})
