"""Flat ``key = value`` run configuration.

Parameter blocks use dotted keys named after the dataclass fields, e.g.
``fusion.k = 3`` or ``tcm.w_vote = 10``. Values are JSON literals; anything
that does not parse as JSON is kept as a string.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import fields
from pathlib import Path

from .evaluation.pipeline import PipelineConfig

BLOCKS = ("fusion", "tcm", "adaptation")
_SECTION = "run"


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config(text: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(f"[{_SECTION}]\n" + text)
    return {k: _parse_value(v) for k, v in cp[_SECTION].items()}


def read_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def format_config(flat: dict) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in sorted(flat.items()))


def flatten(cfg: PipelineConfig) -> dict:
    flat = {}
    for k, v in cfg.to_dict().items():
        if isinstance(v, dict):
            flat.update({f"{k}.{kk}": (list(vv) if isinstance(vv, tuple) else vv) for kk, vv in v.items()})
        else:
            flat[k] = v
    return flat


def pipeline_config(flat: dict | None = None) -> tuple[PipelineConfig, dict]:
    """Build a :class:`PipelineConfig` from flat keys; returns it and the unused keys."""
    flat = dict(flat or {})
    top = {f.name for f in fields(PipelineConfig)} - set(BLOCKS)
    nested: dict = {b: {} for b in BLOCKS}
    kwargs, rest = {}, {}
    for k, v in flat.items():
        block, _, name = k.partition(".")
        if name and block in BLOCKS:
            nested[block][name] = v
        elif k in top:
            kwargs[k] = v
        else:
            rest[k] = v
    return PipelineConfig.from_dict({**kwargs, **nested}), rest


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(format_config(flatten(cfg)).encode("utf-8")).hexdigest()[:16]
