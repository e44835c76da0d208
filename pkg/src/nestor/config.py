"""Run configuration: one nested document, strict keys, explicit defaults.

Files may be JSON or YAML (by extension). Overrides are dotted
``key=value`` pairs whose values parse as JSON when possible and fall back
to plain strings. Unknown keys are rejected with the full key path.
"""

from __future__ import annotations

import copy
import json

from .errors import ConfigError

DEFAULTS = {
    "model": {
        "dim": 64,
        "heads": 8,
        "kernel_sizes": [2, 2],
        "regressor_layers": 3,
        "epsilon_psd": 1e-4,
        "gru_hidden": None,  # defaults to dim // 2
        "mlp_hidden": None,  # defaults to dim
        "max_len": 64,
    },
    "embeddings": {
        "use_char": True,
        "char_dim": 16,
        "use_word": True,
        "word_dim": 50,
        "use_pos": False,
        "pos_dim": 8,
        "use_contextual": False,
        "word_path": None,
        "contextual_path": None,
    },
    "train": {
        "lr": 1e-3,
        "epochs": 300,
        "clip_norm": 1.0,
        "warmup_steps": 30,
        "seed": 1,
        "batch_size": 16,
        "precision": "float32",
        "weight_decay": 0.01,
        "lr_floor": 0.0,
    },
    "data": {
        "train": None,
        "dev": None,
        "test": None,
        "format": "jsonl",  # jsonl | conll
    },
    "ablation": {
        "backward_block": True,
        "spatial_modulation": True,
        "gated_update": True,
        "category_embedding": True,
        "location_iteration": True,
        "logits_iteration": True,
    },
}


def resolve(user: dict | None = None) -> dict:
    """Merge a user document over the defaults, rejecting unknown keys."""
    cfg = copy.deepcopy(DEFAULTS)
    for section, content in (user or {}).items():
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(content, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for key, value in content.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown config key {section}.{key!r}")
            cfg[section][key] = value
    _validate(cfg)
    return cfg


def _validate(cfg: dict):
    m, t = cfg["model"], cfg["train"]
    if not isinstance(m["dim"], int) or m["dim"] < 1:
        raise ConfigError("model.dim must be a positive integer")
    if not isinstance(m["heads"], int) or m["heads"] < 1:
        raise ConfigError("model.heads must be a positive integer")
    if m["dim"] % m["heads"] != 0:
        raise ConfigError(f"model.dim {m['dim']} must be divisible by model.heads {m['heads']}")
    ks = m["kernel_sizes"]
    if not isinstance(ks, list) or any((not isinstance(k, int)) or k < 1 for k in ks):
        raise ConfigError("model.kernel_sizes must be a list of integers >= 1")
    if not isinstance(m["regressor_layers"], int) or m["regressor_layers"] < 0:
        raise ConfigError("model.regressor_layers must be an integer >= 0")
    if not (m["epsilon_psd"] > 0):
        raise ConfigError("model.epsilon_psd must be > 0")
    if not (t["clip_norm"] > 0):
        raise ConfigError("train.clip_norm must be > 0")
    if t["warmup_steps"] < 0:
        raise ConfigError("train.warmup_steps must be >= 0")
    if t["precision"] not in ("float32", "float64"):
        raise ConfigError("train.precision must be 'float32' or 'float64'")
    if t["batch_size"] < 1:
        raise ConfigError("train.batch_size must be >= 1")
    if cfg["data"]["format"] not in ("jsonl", "conll"):
        raise ConfigError("data.format must be 'jsonl' or 'conll'")


def load_config(path) -> dict:
    """Read a JSON or YAML config document (not yet resolved)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML ({e})") from e
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg})") from e
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return doc


def apply_override(doc: dict, assignment: str) -> dict:
    """Apply one ``section.key=value`` override onto an unresolved doc."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like section.key=value")
    path, raw = assignment.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {path!r} must be section.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    section, key = parts
    doc.setdefault(section, {})
    if not isinstance(doc[section], dict):
        raise ConfigError(f"config section {section!r} must be a mapping")
    doc[section][key] = value
    return doc
