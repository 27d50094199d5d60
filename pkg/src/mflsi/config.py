"""YAML run configuration: loading, ``--set`` overrides and conversion to typed objects.

A config is a mapping with ``schema: 1`` and optional sections ``sim``,
``activation``, ``loss``, ``regularizer`` (single spec), ``regularizers``
(named experiment arms), ``teacher``, ``experiment``, ``data``, ``lsi``,
``fp``, ``fit``, ``gradcheck``, ``validate`` and ``output``.  Missing keys
take the defaults of the corresponding dataclass.
"""
from __future__ import annotations

import copy
import dataclasses
import os

import numpy as np
import yaml

from .dynamics import SimConfig
from .errors import InvalidArgument
from .experiment import ExperimentConfig, TeacherSpec, make_teacher_dataset
from .model import ActivationSpec, Dataset, LossSpec, RegularizerSpec, Specs

SCHEMA_VERSION = 1
OUT_ENV = "MFLSI_OUT"

SECTIONS = ("schema", "sim", "activation", "loss", "regularizer", "regularizers", "teacher", "experiment",
            "data", "lsi", "fp", "fit", "gradcheck", "validate", "output")

DEFAULTS = {
    "data": {"source": "teacher", "n": 200, "seed": 0, "path": None},
    "lsi": {"C_universal": 1.0, "strict_proof_scaling": False, "quartic_m": 1.0, "empirical_osc": False,
            "verify_trials": 10000, "verify_radius": 10.0, "lam": None},
    "fp": {"bounds": [[-6.0, 6.0], [-6.0, 6.0]], "shape": [128, 128], "tol": 1e-11, "damping": 0.5,
           "max_iter": 10000, "steps": 0, "dt": None, "safety": 0.5, "record_every": 10,
           "init_mean": [0.0, 0.0], "init_sd": 1.0},
    "fit": {"trajectory": None, "Q_star": None, "window": None},
    "gradcheck": {"instances": 100, "step": 1e-5, "seed": 0, "dims": [1, 2]},
    "validate": {"trials": 10000, "radius": 10.0, "seed": 0},
}


def load(path=None) -> dict:
    if path is None:
        return {"schema": SCHEMA_VERSION}
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {path!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise InvalidArgument(f"malformed config {path!r}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InvalidArgument("config must be a mapping")
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    """``key.sub=value`` pairs; values are parsed as YAML scalars or flow collections."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise InvalidArgument(f"override {item!r} is not key=value")
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise InvalidArgument(f"override {key!r} descends into a non-mapping")
        try:
            node[parts[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise InvalidArgument(f"cannot parse override value {raw!r}") from exc
    return cfg


def check(cfg: dict) -> dict:
    version = cfg.get("schema", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise InvalidArgument(f"unsupported config schema {version!r} (expected {SCHEMA_VERSION})")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise InvalidArgument(f"unknown config sections: {sorted(unknown)}")
    return cfg


def section(cfg: dict, name: str) -> dict:
    merged = dict(DEFAULTS.get(name, {}))
    merged.update(cfg.get(name) or {})
    return merged


def _build(cls, values: dict, what: str):
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(values) - names
    if extra:
        raise InvalidArgument(f"unknown {what} keys: {sorted(extra)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise InvalidArgument(f"bad {what}: {exc}") from exc


def sim_config(cfg: dict) -> SimConfig:
    return _build(SimConfig, dict(cfg.get("sim") or {}), "sim")


def activation(cfg: dict) -> ActivationSpec:
    return _build(ActivationSpec, dict(cfg.get("activation") or {}), "activation")


def loss(cfg: dict, default_kind: str = "clipped-square") -> LossSpec:
    values = {"kind": default_kind, **(cfg.get("loss") or {})}
    return _build(LossSpec, values, "loss")


def regularizer(values: dict) -> RegularizerSpec:
    """Build from ``{kind, beta, q, beta2, ...certificate overrides}``."""
    values = dict(values or {})
    kind = values.pop("kind", "quartic")
    beta = float(values.pop("beta", 1.0))
    if kind == "quartic":
        reg = RegularizerSpec.quartic(beta)
    elif kind == "power":
        reg = RegularizerSpec.power(beta, float(values.pop("q", 2.0)))
    elif kind == "quad-plus-cubic":
        reg = RegularizerSpec.quad_plus_cubic(beta, float(values.pop("beta2", 1.0)))
    else:
        raise InvalidArgument(f"unknown regularizer kind {kind!r}")
    return reg.with_certificates(**values) if values else reg


def regularizer_arms(cfg: dict) -> dict:
    if cfg.get("regularizers"):
        return {str(k): regularizer(v) for k, v in cfg["regularizers"].items()}
    if cfg.get("regularizer") is not None:
        return {"main": regularizer(cfg["regularizer"])}
    return {}


def specs(cfg: dict) -> Specs:
    arms = regularizer_arms(cfg)
    reg = next(iter(arms.values())) if arms else RegularizerSpec.quartic(1.0)
    return Specs(activation(cfg), loss(cfg), reg)


def teacher(cfg: dict, d: int = None) -> TeacherSpec:
    t = dict(cfg.get("teacher") or {})
    act = activation(cfg)
    neurons = t.pop("neurons", None)
    if neurons is None:
        if d not in (None, 2):
            raise InvalidArgument("the default teacher has d = 2; give teacher.neurons for other d")
        return _build(TeacherSpec, {"neurons": [[1.1, [1.0, 2.0]], [-3.2, [-3.0, 1.0]]], "activation": act, **t},
                      "teacher")
    parsed = []
    for nrn in neurons:
        if isinstance(nrn, dict):
            parsed.append((nrn["u"], nrn["w"]))
        else:
            parsed.append((nrn[0], nrn[1]))
    return _build(TeacherSpec, {"neurons": parsed, "activation": act, **t}, "teacher")


def experiment(cfg: dict) -> ExperimentConfig:
    sim = sim_config(cfg)
    arms = regularizer_arms(cfg) or {"l2": RegularizerSpec.power(1.0, 2.0), "l3": RegularizerSpec.power(1.0, 3.0)}
    lsi = section(cfg, "lsi")
    ex = dict(cfg.get("experiment") or {})
    if "fit_window" in ex and ex["fit_window"] is not None:
        ex["fit_window"] = tuple(ex["fit_window"])
    return _build(ExperimentConfig, {
        "sim": sim, "teacher": teacher(cfg, sim.d), "regularizers": arms, "loss": loss(cfg, "square"),
        "outputs": output_dir(cfg), "C_universal": lsi["C_universal"],
        "strict_proof_scaling": lsi["strict_proof_scaling"], "quartic_m": lsi["quartic_m"], **ex,
    }, "experiment")


def dataset(cfg: dict, d: int) -> Dataset:
    """Training data for single-spec commands: a teacher sample or a CSV file (columns x..., y)."""
    dcfg = section(cfg, "data")
    if dcfg["source"] == "file":
        if not dcfg["path"]:
            raise InvalidArgument("data.source=file needs data.path")
        arr = np.loadtxt(dcfg["path"], delimiter=",", ndmin=2)
        return Dataset(arr[:, :-1], arr[:, -1])
    if dcfg["source"] != "teacher":
        raise InvalidArgument(f"unknown data source {dcfg['source']!r}")
    return make_teacher_dataset(teacher(cfg, d), int(dcfg["n"]), dcfg["seed"])


def output_dir(cfg: dict) -> str:
    return cfg.get("output") or os.environ.get(OUT_ENV) or "mflsi_out"
