"""Run configuration: an INI-style key=value file with sections.

Every field has a typed default below; the file only needs the keys it
changes. CLI --set section.key=value overrides beat file values, and the
fully resolved configuration is echoed into the output directory so a run
can be reproduced from its artifacts alone. The grammar is documented in
docs/config-format.md.

Defaults mirror the reference setup where it is stated: simplex scale k=5,
T=5000 training steps, 1000 generation steps, learning rate 3e-5, rho=0.5.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field

OUT_ROOT_ENV = "SIMPLEXDIFF_OUT"

# section -> key -> (type, default); bool values parse true/false/1/0/yes/no
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "run": {
        "seed": (int, 0),
        "out_dir": (str, "run"),
    },
    "data": {
        "train_path": (str, ""),
        "valid_path": (str, ""),
        "format": (str, "tsv"),
        "vocab_path": (str, ""),
        "vocab_max_size": (int, 8192),
        "vocab_min_freq": (int, 1),
        "source_len": (int, 0),  # 0 = widest training source
        "target_len": (int, 0),  # 0 = widest training target
    },
    "model": {
        "layers": (int, 4),
        "heads": (int, 4),
        "d_model": (int, 128),
        "d_ff": (int, 512),
        "max_len": (int, 128),
        "dropout": (float, 0.1),
        "self_cond_mode": (str, "averaged"),
    },
    "schedule": {
        "t_train": (int, 5000),
        "s": (float, 0.008),
        "k": (float, 5.0),
    },
    "train": {
        "learning_rate": (float, 3e-5),
        "warmup_steps": (int, 500),
        "total_steps": (int, 10000),
        "batch_size": (int, 32),
        "rho": (float, 0.5),
        "weight_decay": (float, 0.01),
        "grad_clip": (float, 1.0),
        "log_every": (int, 50),
        "checkpoint_every": (int, 0),
    },
    "generate": {
        "num_steps": (int, 1000),
        "max_target_len": (int, 0),  # 0 = the span the checkpoint trained with
        "self_conditioning": (bool, True),
        "mode": (str, "full_nar"),
        "block_size": (int, 25),
        "batch_size": (int, 64),
    },
}

_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


class ConfigError(ValueError):
    """Bad configuration input; message names the offending key."""


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.values:
            self.values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, raw) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key!r}")
        typ, _ = SCHEMA[section][key]
        self.values[section][key] = _coerce(raw, typ, f"{section}.{key}")

    def section(self, name: str) -> dict[str, object]:
        return dict(self.values[name])

    def dump(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for sec in SCHEMA:
            parser[sec] = {k: _fmt(v) for k, v in self.values[sec].items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def out_dir(self) -> str:
        """Output directory, resolved under $SIMPLEXDIFF_OUT when relative."""
        out = str(self.get("run", "out_dir"))
        if os.path.isabs(out):
            return out
        root = os.environ.get(OUT_ROOT_ENV, "")
        return os.path.join(root, out) if root else out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(raw, typ, where: str):
    if isinstance(raw, typ) and not (typ is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if typ is bool:
            if text.lower() not in _BOOL_WORDS:
                raise ValueError(text)
            return _BOOL_WORDS[text.lower()]
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"bad value for {where}: {raw!r} is not a {typ.__name__}") from e


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a fully resolved RunConfig; unknown keys error."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config syntax error: {e}") from e
    cfg = RunConfig()
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown config section {sec!r}")
        for key, raw in parser[sec].items():
            cfg.set(sec, key, raw)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply --set entries of the form section.key=value."""
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        cfg.set(section.strip(), key.strip(), value.strip())
    return cfg
