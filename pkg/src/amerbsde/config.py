"""Run configuration: an INI file checked against a typed schema.

Every key has a default, so an empty file describes the d = 7 geometric
basket call at full scale. Per-asset fields accept a scalar or a
comma-separated list; ``rho`` accepts a scalar (equicorrelation) or matrix
rows separated by ``;``.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass

import numpy as np

from .market import MarketParams, PayoffKind, PayoffSpec
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def _floats(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.replace(" ", "").split(",") if x != ""])


def _matrix(text: str):
    rows = [r for r in text.split(";") if r.strip()]
    if len(rows) == 1 and "," not in rows[0]:
        return float(rows[0])
    return np.array([_floats(r) for r in rows])


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default text)
SCHEMA: dict[str, dict[str, tuple]] = {
    "market": {
        "d": (int, "7"), "r": (float, "0.0"), "delta": (_floats, "0.02"),
        "sigma": (_floats, "0.25"), "rho": (_matrix, "0.75"), "T": (float, "2.0"),
        "s0": (_floats, "100.0"),
    },
    "payoff": {"kind": (str, "geometric_call"), "K": (float, "100.0")},
    "train": {
        "N": (int, "100"), "J": (int, "4"), "M": (int, "240000"), "C": (int, "3"),
        "steps": (int, "600"), "batch": (int, "400"), "theta": (float, "0.5"),
        "L": (int, "7"), "width": (_opt_int, "auto"), "kappa": (_opt_float, "auto"),
        "clip_norm": (float, "5.0"), "beta1": (float, "0.9"), "beta2": (float, "0.999"),
        "adam_eps": (float, "1e-08"),
    },
    "oracle": {"nodes": (int, "4097"), "steps": (int, "1000"), "dump_every": (int, "10")},
    "lsm": {"chi": (int, "4"), "paths": (int, "0"), "memory_limit": (float, "2500000000.0")},
    "hedge": {"intervals": (int, "100"), "paths": (int, "10000"), "provider": (str, "net"),
              "bins": (int, "50")},
    "run": {"seed": (int, "0"), "output": (str, "runs/default"), "workers": (int, "0")},
}

HEDGE_PROVIDERS = ("net", "fd", "surface")


@dataclass
class OracleConfig:
    nodes: int = 4097
    steps: int = 1000
    dump_every: int = 10


@dataclass
class LSMConfig:
    chi: int = 4
    paths: int = 0  # 0: use the C*M training paths
    memory_limit: float = 2.5e9


@dataclass
class HedgeConfig:
    intervals: int = 100
    paths: int = 10000
    provider: str = "net"
    bins: int = 50


@dataclass
class RunConfig:
    market: MarketParams
    payoff: PayoffSpec
    train: TrainConfig
    oracle: OracleConfig
    lsm: LSMConfig
    hedge: HedgeConfig
    output: str
    seed: int
    workers: int
    raw: dict

    def worker_count(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def serialize(self) -> str:
        return serialize(self.raw)

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


def serialize(raw: dict) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for sec in SCHEMA:
        cp[sec] = {k: raw[sec][k] for k in SCHEMA[sec]}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _raw_from_text(text: str) -> tuple[dict, list[str]]:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    problems = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"unparseable config: {exc}"]) from exc
    raw = {sec: {k: dflt for k, (_, dflt) in keys.items()} for sec, keys in SCHEMA.items()}
    for sec in cp.sections():
        if sec not in SCHEMA:
            problems.append(f"[{sec}]: unknown section")
            continue
        for key, val in cp[sec].items():
            if key not in SCHEMA[sec]:
                problems.append(f"{sec}.{key}: unknown key")
            else:
                raw[sec][key] = val.strip()
    return raw, problems


def build(raw: dict, problems: list[str] | None = None) -> RunConfig:
    problems = list(problems or [])
    vals: dict[str, dict] = {}
    unparsed = False
    for sec, keys in SCHEMA.items():
        vals[sec] = {}
        for key, (parse, _) in keys.items():
            try:
                vals[sec][key] = parse(raw[sec][key])
            except (ValueError, TypeError) as exc:
                problems.append(f"{sec}.{key}: {exc}")
                unparsed = True
    if unparsed:  # cross-field checks need every value
        raise ConfigError(problems)

    m, p, t, o, l, h, r = (vals[s] for s in ("market", "payoff", "train", "oracle", "lsm", "hedge", "run"))
    d = m["d"]
    for key in ("delta", "sigma", "s0"):
        if len(m[key]) not in (1, d):
            problems.append(f"market.{key}: expected 1 or {d} values, got {len(m[key])}")
    if isinstance(m["rho"], np.ndarray) and m["rho"].shape != (d, d):
        problems.append(f"market.rho: expected a {d}x{d} matrix")
    try:
        PayoffKind(p["kind"])
    except ValueError:
        problems.append(f"payoff.kind: must be one of {[k.value for k in PayoffKind]}")
    if p["K"] <= 0:
        problems.append("payoff.K: must be positive")
    if h["intervals"] < 1 or t["N"] % max(h["intervals"], 1):
        problems.append("hedge.intervals: must divide train.N")
    if h["provider"] not in HEDGE_PROVIDERS:
        problems.append(f"hedge.provider: must be one of {list(HEDGE_PROVIDERS)}")
    if o["nodes"] < 3 or o["steps"] < 1 or o["dump_every"] < 1:
        problems.append("oracle: need nodes >= 3, steps >= 1, dump_every >= 1")
    if l["chi"] < 0 or l["paths"] < 0:
        problems.append("lsm: chi and paths must be non-negative")
    if h["paths"] < 1 or h["bins"] < 1:
        problems.append("hedge: paths and bins must be positive")

    market = payoff = train = None
    try:
        market = MarketParams(d=d, r=m["r"], delta=m["delta"], sigma=m["sigma"], rho=m["rho"],
                              T=m["T"], K=p["K"], s0=m["s0"])
    except ValueError as exc:
        problems.append(f"market: {exc}")
    try:
        payoff = PayoffSpec(p["kind"], p["K"])
    except ValueError:
        pass  # already reported
    try:
        train = TrainConfig(seed=r["seed"], **t)
    except ValueError as exc:
        problems.append(f"train: {exc}")
    if problems:
        raise ConfigError(problems)
    return RunConfig(market, payoff, train, OracleConfig(**o), LSMConfig(**l), HedgeConfig(**h),
                     r["output"], r["seed"], r["workers"], raw)


def parse_text(text: str) -> RunConfig:
    raw, problems = _raw_from_text(text)
    return build(raw, problems)


def load(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    return parse_text(text)
