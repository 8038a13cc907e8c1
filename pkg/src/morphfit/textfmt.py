"""Versioned structured-text files: one header line, then a TOML body."""

from __future__ import annotations

import json
import math
import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import FormatError, MeshIOError


def read_header_and_body(path, header):
    """Return the text after the header line; check the header matches ``header``.

    The version token is compared separately so that a file for another
    version of the same kind gives a clear "unsupported version" error.
    """
    path = os.fspath(path)
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise MeshIOError(f"no such file: {path}") from None
    except OSError as exc:
        raise MeshIOError(f"cannot read {path}: {exc}") from None
    first, _, body = text.partition("\n")
    kind, version = header.split()
    got = first.strip().split()
    if len(got) != 2 or got[0] != kind:
        raise FormatError(f"{path}: expected header line {header!r}, got {first.strip()!r}")
    if got[1] != version:
        raise FormatError(f"{path}: unsupported {kind.split('-', 1)[-1]} version {got[1]!r}")
    return body


def read_toml(path, header):
    body = read_header_and_body(path, header)
    try:
        return tomllib.loads(body)
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None


def toml_value(value):
    """Format a scalar/list for a flat TOML document."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int,)):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot format {type(value).__name__} as TOML")
