"""HTTP client with per-attempt timeouts, transport retries, and a bound
on concurrent in-flight requests.

Only transport failures are retried; a response that reaches us but
violates the protocol or its invariants is never transient, so it fails
immediately.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

import httpx

from ..errors import ProtocolError, Timeout, TransportError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RetryPolicy:
    """Per-attempt timeout (seconds), transport retries, in-flight cap."""

    timeout: float = 5.0
    retries: int = 2
    max_inflight: int = 8


class ProtocolClient:
    """Thread-safe client for one endpoint; share across trajectories."""

    def __init__(self, base_url: str, policy: RetryPolicy | None = None):
        self.policy = policy or RetryPolicy()
        self.base_url = base_url.rstrip("/")
        self._client = httpx.Client(
            base_url=self.base_url, timeout=self.policy.timeout
        )
        self._gate = threading.BoundedSemaphore(self.policy.max_inflight)

    def call(self, path: str, payload: dict) -> dict:
        """POST a request body; return the decoded response body.

        Raises:
            Timeout: every attempt timed out.
            TransportError: every attempt failed below HTTP.
            ProtocolError: the server answered outside the protocol.
        """
        last_error: TransportError | None = None
        for attempt in range(self.policy.retries + 1):
            try:
                with self._gate:
                    response = self._client.post(path, json=payload)
            except httpx.TimeoutException as exc:
                last_error = Timeout(f"{path}: attempt {attempt + 1}: {exc}")
                logger.debug("retryable timeout on %s: %s", path, exc)
                continue
            except httpx.TransportError as exc:
                last_error = TransportError(f"{path}: attempt {attempt + 1}: {exc}")
                logger.debug("retryable transport error on %s: %s", path, exc)
                continue
            if response.status_code != 200:
                raise ProtocolError(
                    f"{path} returned {response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise ProtocolError(f"{path} returned a non-JSON body") from exc
        assert last_error is not None
        raise last_error

    def get(self, path: str) -> dict:
        try:
            response = self._client.get(path)
        except httpx.TimeoutException as exc:
            raise Timeout(f"{path}: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransportError(f"{path}: {exc}") from exc
        if response.status_code != 200:
            raise ProtocolError(
                f"{path} returned {response.status_code}: {response.text[:200]}"
            )
        return response.json()

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ProtocolClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
