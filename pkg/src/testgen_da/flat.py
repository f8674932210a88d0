"""Single-line encoding of multi-line text.

Newlines become the ``[EOL]`` token. Literal occurrences of any sentinel
token in the input are escaped by a backslash so that decoding is exact.
Backslashes are only rewritten when they directly precede a sentinel or a
newline (a run of ``k`` of them is doubled), so ordinary Java string escapes
such as ``"\\n"`` pass through untouched.

Decoding a run of ``m`` backslashes followed by a sentinel:

* ``m`` odd  -> ``(m - 1) / 2`` backslashes and the literal sentinel;
* ``m`` even -> ``m / 2`` backslashes and the sentinel's meaning
  (a newline for ``[EOL]``, the bare token for every other sentinel).
"""

from __future__ import annotations

import re

EOL = "[EOL]"
TCS = "[TCS]"
SEP = "<SEP>"
LINE = "<LINE>"
FM = "<FM>"
FC = "<FC>"
C = "<C>"
M = "<M>"
F = "<F>"

SENTINELS = (EOL, TCS, SEP, LINE, FM, FC, C, M, F)

_alts = "|".join(re.escape(s) for s in sorted(SENTINELS, key=len, reverse=True))
_ENCODE_RE = re.compile(r"(\\*)(" + _alts + r"|\n)")
_DECODE_RE = re.compile(r"(\\*)(" + _alts + r")")


def _encode_match(m: re.Match) -> str:
    slashes, token = m.group(1), m.group(2)
    if token == "\n":
        return slashes * 2 + EOL
    return slashes * 2 + "\\" + token


def _decode_match(m: re.Match) -> str:
    run, token = len(m.group(1)), m.group(2)
    if run % 2:
        return "\\" * (run // 2) + token
    if token == EOL:
        return "\\" * (run // 2) + "\n"
    return "\\" * (run // 2) + token


def encode_flat(text: str) -> str:
    """Flatten ``text`` onto one line, escaping sentinel collisions."""
    return _ENCODE_RE.sub(_encode_match, text)


def decode_flat(flat: str) -> str:
    """Exact inverse of :func:`encode_flat`."""
    return _DECODE_RE.sub(_decode_match, flat)


def split_unescaped(flat: str, token: str) -> list[str]:
    """Split ``flat`` on occurrences of ``token`` that are not escaped.

    Escaped occurrences (odd backslash run) are left in place, still escaped,
    so each piece can be fed to :func:`decode_flat` on its own.
    """
    pieces = []
    start = 0
    for m in _DECODE_RE.finditer(flat):
        if m.group(2) != token or len(m.group(1)) % 2:
            continue
        # an even run of 2k backslashes before a live token encodes k literal ones
        pieces.append(flat[start:m.start()] + "\\" * (len(m.group(1)) // 2))
        start = m.end()
    pieces.append(flat[start:])
    return pieces


def join_unescaped(pieces: list[str], token: str) -> str:
    """Inverse of :func:`split_unescaped`.

    A piece ending in backslashes would otherwise escape the token that
    follows it, so that trailing run is doubled.
    """
    out = []
    for i, piece in enumerate(pieces):
        if i < len(pieces) - 1:
            run = len(piece) - len(piece.rstrip("\\"))
            piece = piece + "\\" * run
        out.append(piece)
    return token.join(out)
