"""Run configuration: one nested mapping covering every stage, hashed for
artifact provenance.

The schema is the DEFAULTS tree itself: a user file may override any subset
of its keys but may not introduce new ones, and every leaf must keep the
default's type (int leaves accept ints, float leaves accept ints or floats,
seeds may be null to derive from the base seed).  `resolve_config` returns a
fully materialized copy with derived seeds filled in plus the hash of that
resolved form, so two runs agree on the hash exactly when they agree on
every effective setting.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .errors import ConfigInvalid

DEFAULTS: dict = {
    "seed": 7,
    "out_dir": "artifacts",
    "data": {
        "patients": 750,
        "num_diseases": 48,
        "lab_sizes": [42, 29, 4],
        "clusters": 4,
        "hierarchy_depth": 2,
        "affinity": 0.9,
        "progression": 0.8,
        "mean_admissions": 2.7,
        "hf_codes": None,        # null: every disease code in cluster 0
        "seed": None,
    },
    "split": {
        "ratios": [0.8, 0.0667, 0.1333],
        "seed": None,
    },
    "kg": {
        "theta": 0.85,
        "relation_theta": None,  # null: reuse theta
    },
    "kge": {
        "k": 64,
        "gamma": 6.0,
        "lam": 0.5,
        "negatives": 16,
        "steps": 2000,
        "lr": 0.01,
        "batch_size": 64,
        "filtered_eval": True,
        "seed": None,
    },
    "graph": {
        "phi": 0.5,
        "include_disease_lab": True,
        "include_lab_lab": False,
        "per_patient": False,
    },
    "encoder": {
        "feature_width": 128,
        "gnn_hidden": 256,
        "admission_width": 256,
        "attention_dim": 256,
        "patient_width": 256,
        "decoder_hidden": 256,
        "dropout_attention": 0.2,
        "dropout_decoder": 0.4,
        "dropout_head": 0.5,
        "propagation": "attention",
        "feature_init_gamma": 12.0,
        "use_kg_prior": True,
        "seed": None,
    },
    "train": {
        "joint_epochs": 10,
        "joint_lr": 0.002,
        "individual_epochs": 2,
        "individual_lr": 0.002,
        "task_epochs": 50,
        "task_lr": 0.004,
        "batch_size": 32,
        "decay": 0.999,
        "task": "diagnosis",
        "rt": False,
        "seed": None,
    },
    "evaluate": {
        "recall_ks": [10, 20],
    },
}

# Scale the paper trains at; not the default because the desk-scale defaults
# must finish end to end in minutes on one CPU.  Merge over DEFAULTS by
# passing {"preset": "paper"} in a config file.
PAPER_SCALE: dict = {
    "data": {
        "patients": 7500,
        "num_diseases": 256,
        "lab_sizes": [417, 286, 35],
    },
    "kge": {
        "k": 1000,
        "gamma": 12.0,
        "negatives": 64,
        "steps": 180_000,
        "batch_size": 512,
    },
    "encoder": {
        "feature_width": 2000,
    },
    "train": {
        "joint_epochs": 50,
        "task_epochs": 100,
    },
}

# Offsets for deriving per-stage seeds from the base seed when a stage seed
# is left null.  Distinct primes so stages never share a stream by accident.
_SEED_OFFSETS = {
    ("data", "seed"): 101,
    ("split", "seed"): 211,
    ("kge", "seed"): 307,
    ("encoder", "seed"): 401,
    ("train", "seed"): 503,
}

_NULLABLE = {("data", "seed"), ("split", "seed"), ("kge", "seed"),
             ("encoder", "seed"), ("train", "seed"),
             ("data", "hf_codes"), ("kg", "relation_theta")}


def _check(user, default, trail: tuple[str, ...]) -> None:
    dotted = ".".join(trail) or "<root>"
    if isinstance(default, dict):
        if not isinstance(user, dict):
            raise ConfigInvalid(f"{dotted} must be a mapping, got {type(user).__name__}")
        for key in user:
            if key not in default:
                raise ConfigInvalid(f"unknown config key {'.'.join(trail + (str(key),))}")
            _check(user[key], default[key], trail + (str(key),))
        return
    if user is None:
        if trail in _NULLABLE or default is None:
            return
        raise ConfigInvalid(f"{dotted} may not be null")
    if isinstance(default, bool):
        if not isinstance(user, bool):
            raise ConfigInvalid(f"{dotted} must be a boolean")
    elif isinstance(default, int):
        if isinstance(user, bool) or not isinstance(user, int):
            raise ConfigInvalid(f"{dotted} must be an integer")
    elif isinstance(default, float):
        if isinstance(user, bool) or not isinstance(user, (int, float)):
            raise ConfigInvalid(f"{dotted} must be a number")
    elif isinstance(default, str):
        if not isinstance(user, str):
            raise ConfigInvalid(f"{dotted} must be a string")
    elif isinstance(default, list):
        if not isinstance(user, list):
            raise ConfigInvalid(f"{dotted} must be a list")
        if default and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                           for v in default):
            for v in user:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigInvalid(f"{dotted} must hold numbers only")
        if trail[-1:] == ("lab_sizes",) and len(user) != 3:
            raise ConfigInvalid(f"{dotted} must list exactly 3 category sizes")
        if trail[-1:] == ("ratios",) and len(user) != 3:
            raise ConfigInvalid(f"{dotted} must list exactly 3 ratios")
    elif default is None:
        # nullable leaf with no type anchor: hf_codes takes a list of strings
        if trail[-1:] == ("hf_codes",):
            if not (isinstance(user, list) and all(isinstance(v, str) for v in user)):
                raise ConfigInvalid(f"{dotted} must be a list of code strings")
        elif trail[-1:] == ("relation_theta",):
            if isinstance(user, bool) or not isinstance(user, (int, float)):
                raise ConfigInvalid(f"{dotted} must be a number")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_config(user: dict | None = None, seed: int | None = None,
                   out_dir: str | None = None) -> dict:
    """Validated, fully materialized config. `seed`/`out_dir` are the CLI
    flag overrides and win over both the file and the defaults."""
    user = copy.deepcopy(user) if user else {}
    preset = user.pop("preset", None)
    if preset not in (None, "paper"):
        raise ConfigInvalid(f"unknown preset {preset!r}")
    base = _merge(DEFAULTS, PAPER_SCALE) if preset == "paper" else DEFAULTS
    _check(user, DEFAULTS, ())
    cfg = _merge(base, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out_dir is not None:
        cfg["out_dir"] = str(out_dir)
    for (group, key), offset in _SEED_OFFSETS.items():
        if cfg[group][key] is None:
            cfg[group][key] = cfg["seed"] * 1000 + offset
    if cfg["kg"]["relation_theta"] is None:
        cfg["kg"]["relation_theta"] = cfg["kg"]["theta"]
    return cfg


def config_hash(cfg: dict) -> str:
    """First 12 hex chars of the sha256 of the canonical JSON serialization.
    out_dir stays out of the hash: where artifacts land does not change what
    they contain."""
    slim = {k: v for k, v in cfg.items() if k != "out_dir"}
    canon = json.dumps(slim, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def load_config(path: str | Path | None, seed: int | None = None,
                out_dir: str | None = None) -> dict:
    """Read a JSON config file (or use pure defaults when path is None) and
    resolve it."""
    user = None
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigInvalid(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigInvalid("config file must hold a JSON object")
    return resolve_config(user, seed=seed, out_dir=out_dir)
