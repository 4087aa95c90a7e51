"""Flat ``key=value`` run configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Keys are the CctConfig fields plus the run paths ``data``,
``checkpoint_out`` and ``report_dir``. Unknown keys are rejected; missing
keys keep their defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .model import CctConfig

PATH_KEYS = ("data", "checkpoint_out", "report_dir")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: CctConfig = field(default_factory=CctConfig)
    data: str = ""
    checkpoint_out: str = ""
    report_dir: str = ""


def _field_types() -> dict[str, type]:
    return {f.name: type(f.default) for f in dataclasses.fields(CctConfig)}


def _coerce(key: str, raw: str, kind: type):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def cct_config_from_pairs(pairs: dict[str, str], base: CctConfig | None = None) -> CctConfig:
    types = _field_types()
    unknown = sorted(set(pairs) - set(types))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {k: _coerce(k, v, types[k]) for k, v in pairs.items()}
    cfg = dataclasses.replace(base or CctConfig(), **values)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def cct_config_to_text(cfg: CctConfig) -> str:
    return "".join(f"{f.name}={_format_value(getattr(cfg, f.name))}\n" for f in dataclasses.fields(cfg))


def cct_config_from_text(text: str) -> CctConfig:
    return cct_config_from_pairs(parse_pairs(text))


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    pairs = parse_pairs(text, source)
    paths = {k: pairs.pop(k) for k in PATH_KEYS if k in pairs}
    return RunConfig(model=cct_config_from_pairs(pairs), **paths)


def load_run_config(path: str) -> RunConfig:
    with open(path) as fh:
        return parse_run_config(fh.read(), path)


def run_config_to_text(rc: RunConfig) -> str:
    text = cct_config_to_text(rc.model)
    return text + "".join(f"{k}={getattr(rc, k)}\n" for k in PATH_KEYS)
