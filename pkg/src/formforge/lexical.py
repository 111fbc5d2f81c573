"""Lexical scanning of formal-language sources.

Rule used by the mechanical keyword gate, documented here once:

  * `--` starts a line comment;
  * `/-` ... `-/` is a block comment and nests;
  * double-quoted string literals may contain backslash escapes;
  * code tokens are maximal runs of identifier characters
    (letters, digits, `_`, `'`) appearing outside comments and strings.

A forbidden keyword therefore only matches as a whole token in live code:
`syntaxTree` or a mention inside a comment never trips the gate.
"""

from __future__ import annotations

from dataclasses import dataclass

_IDENT_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_'")


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    column: int


def strip_to_code(source: str) -> str:
    """Replace comments and string literals with spaces, preserving layout."""
    out = list(source)
    i = 0
    n = len(source)
    depth = 0
    in_line_comment = False
    in_string = False
    while i < n:
        ch = source[i]
        nxt = source[i + 1] if i + 1 < n else ""
        if in_line_comment:
            if ch == "\n":
                in_line_comment = False
            else:
                out[i] = " "
            i += 1
            continue
        if in_string:
            if ch == "\\" and nxt:
                out[i] = " "
                out[i + 1] = " " if nxt != "\n" else "\n"
                i += 2
                continue
            if ch == '"':
                out[i] = " "
                in_string = False
            elif ch != "\n":
                out[i] = " "
            i += 1
            continue
        if depth > 0:
            if ch == "/" and nxt == "-":
                depth += 1
                out[i] = out[i + 1] = " "
                i += 2
                continue
            if ch == "-" and nxt == "/":
                depth -= 1
                out[i] = out[i + 1] = " "
                i += 2
                continue
            if ch != "\n":
                out[i] = " "
            i += 1
            continue
        if ch == "/" and nxt == "-":
            depth = 1
            out[i] = out[i + 1] = " "
            i += 2
            continue
        if ch == "-" and nxt == "-":
            in_line_comment = True
            out[i] = out[i + 1] = " "
            i += 2
            continue
        if ch == '"':
            in_string = True
            out[i] = " "
            i += 1
            continue
        i += 1
    return "".join(out)


def code_tokens(source: str) -> list[Token]:
    """Identifier-like tokens outside comments and strings, with positions."""
    code = strip_to_code(source)
    tokens: list[Token] = []
    line = 1
    column = 0
    current: list[str] = []
    start_line = start_column = 0
    for ch in code + "\n":
        column += 1
        if ch in _IDENT_CHARS:
            if not current:
                start_line, start_column = line, column
            current.append(ch)
        else:
            if current:
                tokens.append(Token("".join(current), start_line, start_column))
                current = []
            if ch == "\n":
                line += 1
                column = 0
    return tokens


def find_forbidden_tokens(source: str, forbidden: set[str]) -> list[Token]:
    return [t for t in code_tokens(source) if t.text in forbidden]
