"""Flat ``key: value`` config files feeding CLI defaults.

Any key matching an option of the invoked subcommand becomes that option's
default; explicit command-line flags still win. Unknown keys are ignored
so one file can drive several subcommands.
"""
from __future__ import annotations

from pathlib import Path

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def load_config_file(path) -> dict:
    values = {}
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise ValueError("%s:%d: expected 'key: value'" % (path, lineno))
            key, value = line.split(":", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def apply_config(parser, values: dict) -> None:
    """Install config values as parser defaults, converting per option type."""
    for action in parser._actions:
        if action.dest in values:
            raw = values[action.dest]
            if action.const is True:  # store_true flag
                if raw.lower() not in _BOOL:
                    raise ValueError("config key %s: expected a boolean, got %r" % (action.dest, raw))
                converted = _BOOL[raw.lower()]
            elif action.type is not None:
                converted = action.type(raw)
            else:
                converted = raw
            parser.set_defaults(**{action.dest: converted})
