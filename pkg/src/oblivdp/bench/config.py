"""Flat ``key = value`` benchmark configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

PRESETS = {"small": 10_000, "medium": 100_000, "large": 1_000_000}


class ConfigError(ValueError):
    pass


@dataclass
class BenchConfig:
    operator: str = "filter"            # filter | group | join
    preset: str = "small"
    rows: int | None = None             # overrides the preset
    scale: float = 1.0                  # multiplies the preset size
    epsilon: float = 1.0
    delta: float = 2.0 ** -30
    seed: int = 0
    mode: str = "standard"              # standard | oblivious
    group_impl: str = "hash"            # hash | sort
    groups: int | None = None           # UserVisits group count (default: sublinear in rows)
    group_slots: int | None = None      # hash-table capacity M_groups (default: fill private memory)
    bound_mode: str = "simulated"       # the analytic bound exceeds N at desk sizes and delta = 2**-30
    crypto: str = "aead"                # aead | plaintext
    block_size: int = 4096
    private_mb: float = 8.0
    noiseless: bool = False
    out: str | None = None
    # gen / distinct / simulate-bm / verify
    table: str = "uservisits"
    input: str | None = None
    column: str = "sourceIP"
    prefix: int = 8
    keep_fillers: bool = False
    eta: float = 0.1
    n: int = 2 ** 16
    delta_list: list[float] = field(default_factory=lambda: [2.0 ** -k for k in range(5, 16)])
    trials: int = 200

    @property
    def n_rows(self) -> int:
        if self.rows is not None:
            return int(self.rows)
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        return int(round(PRESETS[self.preset] * self.scale))

    @property
    def private_bytes(self) -> int:
        return int(self.private_mb * 2 ** 20)

    def validate(self) -> "BenchConfig":
        if self.operator not in ("filter", "group", "join"):
            raise ConfigError(f"unknown operator {self.operator!r}")
        if self.mode not in ("standard", "oblivious"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.group_impl not in ("hash", "sort"):
            raise ConfigError(f"unknown group_impl {self.group_impl!r}")
        if self.crypto not in ("aead", "plaintext"):
            raise ConfigError(f"unknown crypto {self.crypto!r}")
        if self.n_rows < 0:
            raise ConfigError("rows must be non-negative")
        return self


def _convert(f: dataclasses.Field, raw: str):
    raw = raw.strip()
    kind = str(f.type)
    if raw.lower() in ("none", "") and "None" in kind:
        return None
    if kind.startswith("list"):
        return [float(eval_number(x)) for x in raw.replace(",", " ").split()]
    if kind.startswith("bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{f.name}: not a boolean: {raw!r}")
    if kind.startswith("int"):
        return int(eval_number(raw))
    if kind.startswith("float"):
        return float(eval_number(raw))
    return raw


def eval_number(text: str) -> float:
    """Parse ``1e-3``, ``2**-30`` or ``2^-30``."""
    t = text.strip().replace("^", "**")
    if "**" in t:
        base, exp = t.split("**", 1)
        return float(base) ** float(exp)
    v = float(t)
    return int(v) if v.is_integer() and "." not in t and "e" not in t.lower() else v


def parse_config(text: str, base: BenchConfig | None = None) -> BenchConfig:
    cfg = dataclasses.replace(base) if base else BenchConfig()
    known = {f.name: f for f in dataclasses.fields(BenchConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _convert(known[key], value))
    return cfg


def load_config(path: str | Path | None, overrides: dict | None = None) -> BenchConfig:
    cfg = parse_config(Path(path).read_text()) if path else BenchConfig()
    if overrides:
        known = {f.name: f for f in dataclasses.fields(BenchConfig)}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown key {key!r}")
            setattr(cfg, key, _convert(known[key], str(value)) if isinstance(value, str) else value)
    return cfg
