"""Pluggable build verification.

A verifier judges a workspace tree: pass, or fail with file-level
diagnostics. Verdicts are deterministic for a fixed tree within one run.
Two adapters ship: `toy` checks the built-in toy language, and
`exec:<command>` runs an arbitrary command in the workspace (exit code 0 is
a pass; diagnostics are parsed from `<file>:<line>: <message>` lines), which
is where a real proof-assistant build plugs in.
"""

from __future__ import annotations

import re
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from . import toylang


class VerifierUnavailable(Exception):
    """The verifier itself could not run; not a verdict about the tree."""


@dataclass(frozen=True)
class Diagnostic:
    file: str
    message: str
    line: int = 0

    def to_payload(self) -> dict:
        return {"file": self.file, "line": self.line, "message": self.message}


@dataclass(frozen=True)
class Verdict:
    passed: bool
    diagnostics: tuple[Diagnostic, ...] = ()

    def to_payload(self) -> dict:
        return {
            "passed": self.passed,
            "diagnostics": [d.to_payload() for d in self.diagnostics],
        }


class BuildVerifier(Protocol):
    def verify(self, workspace: Path) -> Verdict: ...


class ToyVerifier:
    """Verifies toy-language workspaces: parse errors and `#fail` markers fail."""

    def verify(self, workspace: Path) -> Verdict:
        try:
            project = toylang.parse_workspace(Path(workspace))
        except OSError as exc:
            raise VerifierUnavailable(str(exc)) from exc
        diagnostics = tuple(
            Diagnostic(file=i.file, line=i.line, message=i.message)
            for i in project.failures
        )
        return Verdict(passed=not diagnostics, diagnostics=diagnostics)


_DIAG_LINE = re.compile(r"^(?P<file>[^:\n]+):(?P<line>\d+):\s*(?P<message>.*)$")


class ExecVerifier:
    """Runs a command in the workspace; exit 0 passes."""

    def __init__(self, command: str, timeout_s: float = 600.0) -> None:
        self.command = command
        self.timeout_s = timeout_s

    def verify(self, workspace: Path) -> Verdict:
        try:
            proc = subprocess.run(
                shlex.split(self.command),
                cwd=str(workspace),
                capture_output=True,
                text=True,
                timeout=self.timeout_s,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise VerifierUnavailable(str(exc)) from exc
        if proc.returncode == 0:
            return Verdict(passed=True)
        diagnostics = []
        for line in (proc.stdout + "\n" + proc.stderr).splitlines():
            match = _DIAG_LINE.match(line.strip())
            if match:
                diagnostics.append(
                    Diagnostic(
                        file=match.group("file"),
                        line=int(match.group("line")),
                        message=match.group("message"),
                    )
                )
        if not diagnostics:
            diagnostics.append(
                Diagnostic(file="", line=0, message=f"command failed: {self.command}")
            )
        return Verdict(passed=False, diagnostics=tuple(diagnostics))


def make_verifier(spec: str) -> BuildVerifier:
    """Build a verifier from its config name: `toy` or `exec:<command>`."""
    if spec == "toy":
        return ToyVerifier()
    if spec.startswith("exec:"):
        command = spec[len("exec:"):].strip()
        if not command:
            raise ValueError("exec verifier requires a command")
        return ExecVerifier(command)
    raise ValueError(f"unknown verifier spec: {spec!r}")
