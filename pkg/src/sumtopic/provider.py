"""HTTP plumbing shared by the completion and embedding providers."""
from __future__ import annotations
import logging
import os
import re
import time
from typing import Any, Callable

import requests

__all__ = ["ProviderError", "auth_headers", "post_json", "resolve_field", "safe_id"]


class ProviderError(RuntimeError):
    """A provider failed after all retries, or returned an unusable response."""


def safe_id(text: str) -> str:
    """Turns a provider description into a string usable as a directory name."""
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_") or "provider"


def auth_headers(api_key_env: str, auth_header: str, auth_scheme: str) -> dict[str, str]:
    """Builds request headers, reading the API key from the environment variable
    named ``api_key_env``. No auth header is sent when the variable is unset.
    """
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(api_key_env) if api_key_env else None
    if key:
        headers[auth_header] = f"{auth_scheme} {key}".strip()
    return headers


def resolve_field(payload: Any, path: str) -> Any:
    """Follows a dotted path such as ``"choices.0.text"`` into a decoded JSON
    response.

    Raises:
        ProviderError: If the path does not exist in ``payload``.
    """
    value = payload
    for part in path.split("."):
        try:
            value = value[int(part)] if isinstance(value, list) else value[part]
        except (KeyError, IndexError, TypeError, ValueError):
            raise ProviderError(f"Response has no field '{path}'") from None
    return value


def post_json(
    url: str,
    payload: dict,
    *,
    headers: dict[str, str],
    timeout: float,
    max_attempts: int = 3,
    backoff_seconds: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> Any:
    """POSTs ``payload`` and returns the decoded JSON response, retrying transport
    failures and 5xx/429 responses with exponential backoff
    (``backoff_seconds * 2**attempt``).

    Raises:
        ProviderError: After ``max_attempts`` failed attempts, or immediately on a
          non-retryable 4xx response.
    """
    log = logging.getLogger("sumtopic.main")

    last_error: Exception | None = None
    for attempt in range(max_attempts):
        try:
            response = requests.post(url, json=payload, headers=headers, timeout=timeout)
            if response.status_code == 429 or response.status_code >= 500:
                raise requests.HTTPError(
                    f"{response.status_code} from {url}", response=response
                )
            response.raise_for_status()
            return response.json()
        except requests.HTTPError as e:
            status = e.response.status_code if e.response is not None else None
            if status is not None and 400 <= status < 500 and status != 429:
                raise ProviderError(f"Request to {url} rejected: {e}") from e
            last_error = e
        except (requests.RequestException, ValueError) as e:
            last_error = e

        if attempt + 1 < max_attempts:
            delay = backoff_seconds * 2**attempt
            log.warning(
                "Provider request failed (%s); retry %d/%d in %.1fs",
                last_error,
                attempt + 1,
                max_attempts - 1,
                delay,
            )
            sleep(delay)

    raise ProviderError(
        f"Request to {url} failed after {max_attempts} attempts: {last_error}"
    ) from last_error
