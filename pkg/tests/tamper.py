"""Enumerate single-field edits of a serialized purchase trace."""

from __future__ import annotations

import copy


def _bump(v):
    if isinstance(v, bool):
        return not v
    if isinstance(v, int):
        return v + 1
    if isinstance(v, float):
        return v + 1.0
    if isinstance(v, str):
        if v.startswith("0x") or all(c in "0123456789abcdef" for c in v) and len(v) >= 32:
            # Flip one hex digit, keeping the string well-formed.
            last = v[-1]
            return v[:-1] + ("0" if last != "0" else "1")
        return v + "x"
    if v is None:
        return 0
    raise TypeError(type(v))


def _leaves(node, path=()):
    if isinstance(node, dict):
        for k in sorted(node):
            yield from _leaves(node[k], path + (k,))
    elif isinstance(node, list):
        for i, x in enumerate(node):
            yield from _leaves(x, path + (i,))
    else:
        yield path, node


def single_field_tampers(trace: dict):
    """Yield ``(path, tampered_copy)`` for every leaf value of ``trace``."""
    for path, value in _leaves(trace):
        t = copy.deepcopy(trace)
        node = t
        for k in path[:-1]:
            node = node[k]
        node[path[-1]] = _bump(value)
        yield path, t
