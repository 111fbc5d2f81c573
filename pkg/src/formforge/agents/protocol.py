"""Parsing of structured agent responses.

Reviewers answer with a leading `APPROVED:` or `REJECTED:` token; graders
and matchers answer with a JSON object embedded in free text. Parsing is
strict and the bounded re-prompt policies live with the conversation
helpers in `runtime`.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass


class MalformedVerdict(Exception):
    pass


class MalformedPayload(Exception):
    pass


@dataclass(frozen=True)
class ReviewVerdict:
    approved: bool
    feedback: str


_VERDICT_RE = re.compile(r"^\s*(APPROVED|REJECTED)\s*:\s*(.*)", re.DOTALL)


def parse_reviewer_verdict(text: str) -> ReviewVerdict:
    """Parse `APPROVED: <reason>` / `REJECTED: <specific feedback>`."""
    if not text or not text.strip():
        raise MalformedVerdict("empty reviewer response")
    match = _VERDICT_RE.match(text)
    if match is None:
        raise MalformedVerdict(f"no APPROVED/REJECTED prefix in: {text[:80]!r}")
    return ReviewVerdict(
        approved=match.group(1) == "APPROVED",
        feedback=match.group(2).strip(),
    )


def extract_first_json(text: str) -> dict:
    """First well-formed JSON object embedded anywhere in the text."""
    decoder = json.JSONDecoder()
    for start in range(len(text)):
        if text[start] != "{":
            continue
        try:
            value, _end = decoder.raw_decode(text[start:])
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict):
            return value
    raise MalformedPayload("no JSON object found in response")


def parse_json_payload(
    text: str,
    required: dict[str, type | tuple] | None = None,
    enums: dict[str, set] | None = None,
) -> dict:
    """Extract and validate the first JSON object in an assistant response.

    `required` maps field names to expected types; `enums` maps field names
    to allowed values.
    """
    payload = extract_first_json(text)
    for name, expected in (required or {}).items():
        if name not in payload:
            raise MalformedPayload(f"missing required field {name!r}")
        if expected is not None and not isinstance(payload[name], expected):
            raise MalformedPayload(
                f"field {name!r} has type {type(payload[name]).__name__}, "
                f"expected {expected}"
            )
    for name, allowed in (enums or {}).items():
        if name in payload and payload[name] not in allowed:
            raise MalformedPayload(
                f"field {name!r} value {payload[name]!r} not in {sorted(map(str, allowed))}"
            )
    return payload
