"""Adversary-side access to the oracle, over HTTP or in process.

Both clients expose ``classify(counts) -> ClassifyResponse`` and raise
``RateLimited`` / ``OracleUnavailable``; neither retries on its own.
"""

from __future__ import annotations

import httpx
import numpy as np

from .errors import OracleUnavailable, RateLimited, ValidationError
from .oracle import ClassifyResponse, QueryBudget, TargetClassifier, classify


class OracleClient:
    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint.rstrip("/")
        self._http = httpx.Client(base_url=self.endpoint, timeout=timeout)

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def healthy(self) -> bool:
        try:
            return self._http.get("/healthz").status_code == 200
        except httpx.HTTPError:
            return False

    def classify(self, counts) -> ClassifyResponse:
        body = {"counts": [int(c) for c in np.asarray(counts).reshape(-1)]}
        try:
            r = self._http.post("/classify", json=body)
        except httpx.HTTPError as exc:
            raise OracleUnavailable(f"{self.endpoint}: {exc}") from exc
        if r.status_code == 429:
            raise RateLimited(int(r.json().get("retry_after_seconds", 0)))
        if r.status_code == 400:
            raise ValidationError(f"oracle rejected request: {r.json().get('detail')}")
        if r.status_code != 200:
            raise OracleUnavailable(f"{self.endpoint}: unexpected HTTP {r.status_code}")
        try:
            data = r.json()
            return ClassifyResponse(int(data["label"]), float(data["score"]), int(data["remaining"]))
        except (ValueError, KeyError) as exc:
            raise OracleUnavailable(f"{self.endpoint}: malformed reply") from exc


class LocalOracle:
    """In-process stand-in with the same interface as :class:`OracleClient`."""

    def __init__(self, target: TargetClassifier, budget: QueryBudget | None = None):
        self.target = target
        self.budget = budget or QueryBudget()

    def classify(self, counts) -> ClassifyResponse:
        return classify(self.target, self.budget, np.asarray(counts))

    def close(self) -> None:
        pass


def client_classify(endpoint: str, features) -> ClassifyResponse:
    with OracleClient(endpoint) as c:
        return c.classify(features)
