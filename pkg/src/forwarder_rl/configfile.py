"""Flat dotted key-value config files.

Format: one `dotted.key = value` per line, `#` starts a comment. Values are
parsed as JSON where possible (numbers, booleans, lists, strings); anything
that fails to parse is kept as a bare string. The same syntax is used for
`--set` command-line overrides.
"""
from __future__ import annotations

import json


class ConfigError(ValueError):
    pass


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return text


def set_path(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"config key {dotted!r} conflicts with a scalar value")
    node[parts[-1]] = value


def get_path(tree: dict, dotted: str, default=None):
    node = tree
    for p in dotted.split("."):
        if not isinstance(node, dict) or p not in node:
            return default
        node = node[p]
    return node


def parse_config_text(text: str) -> dict:
    tree: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        set_path(tree, key, parse_value(val))
    return tree


def load_config_file(path) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read())


def apply_overrides(tree: dict, overrides) -> dict:
    """Apply 'dotted.key=value' strings in place; returns the tree."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, _, val = item.partition("=")
        set_path(tree, key.strip(), parse_value(val))
    return tree


def flatten(tree: dict, prefix: str = "") -> list:
    items = []
    for k in sorted(tree):
        v = tree[k]
        dotted = f"{prefix}{k}"
        if isinstance(v, dict):
            items.extend(flatten(v, dotted + "."))
        else:
            items.append((dotted, v))
    return items


def dump_config_text(tree: dict) -> str:
    lines = [f"{k} = {json.dumps(v)}" for k, v in flatten(tree)]
    return "\n".join(lines) + "\n"


def merge(base: dict, extra: dict) -> dict:
    """Deep merge (extra wins); returns a new tree."""
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out
