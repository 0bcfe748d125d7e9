"""YAML experiment configuration with line-anchored validation errors.

Example::

    N: 3
    M_S: 2
    U: 1
    J: 4
    constellation: BPSK
    S: 1
    snr_db: {start: 0, stop: 12, step: 2}   # or an explicit list
    protocols: [switched_max_link, mmd_max_link, {name: threshold_max_link_dt, r0: 1}]
    seeds: [1, 2, 3]
    variances: {SR: 1.0, RD: 1.0, SD: 1.0}
    csi: {beta: 0.0, alpha: 0.0}
    packets: 20000            # default 10000 * M_S
    symbols_per_packet: 100
    dtmc: {draws: 10000}
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .channel import CsiModel, LinkVarianceProfile, UnsupportedConstellation, build_constellation
from .engine import ProtocolKind, SimulationConfig, parse_protocol

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "config_from_dict"]

_KEYS = {"N", "M_S", "U", "J", "constellation", "S", "snr_db", "packets", "symbols_per_packet",
         "variances", "csi", "protocols", "seeds", "r0", "dtmc"}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class ExperimentConfig:
    N: int
    M_S: int
    U: int
    J: int
    constellation: str
    S: float
    snr_db: tuple[float, ...]
    protocols: tuple[ProtocolKind, ...]
    seeds: tuple[int, ...]
    packets: int | None = None
    symbols_per_packet: int = 100
    profile: LinkVarianceProfile = field(default_factory=LinkVarianceProfile)
    csi: CsiModel = field(default_factory=CsiModel)
    r0: float = 1.0
    dtmc_draws: int = 10_000
    N0: float = 1.0

    @property
    def L(self) -> int:
        return self.J // self.M_S

    @property
    def M_R(self) -> int:
        return self.U * self.M_S

    def simulation_config(self, snr_db: float, **overrides) -> SimulationConfig:
        kw = dict(N=self.N, M_S=self.M_S, U=self.U, J=self.J, constellation=self.constellation,
                  snr_db=float(snr_db), packets=self.packets,
                  symbols_per_packet=self.symbols_per_packet, profile=self.profile,
                  csi=self.csi, N0=self.N0)
        kw.update(overrides)
        return SimulationConfig(**kw)


def _key_lines(node, prefix=()) -> dict:
    """Map key paths (tuples) to 1-based source lines."""
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (k.value,)
            lines[path] = k.start_mark.line + 1
            lines.update(_key_lines(v, path))
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            path = prefix + (i,)
            lines[path] = v.start_mark.line + 1
            lines.update(_key_lines(v, path))
    return lines


def _snr_grid(value, err):
    if isinstance(value, dict):
        unknown = set(value) - {"start", "stop", "step"}
        if unknown or not {"start", "stop"} <= set(value):
            err("snr_db range needs 'start' and 'stop' (and optionally 'step')")
        start, stop = float(value["start"]), float(value["stop"])
        step = float(value.get("step", 1.0))
        if step <= 0 or stop < start:
            err("snr_db range needs step > 0 and stop >= start")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        grid = [start + k * step for k in range(n)]
    elif isinstance(value, (list, tuple)):
        grid = [float(v) for v in value]
    elif isinstance(value, (int, float)):
        grid = [float(value)]
    else:
        err("snr_db must be a number, a list or a {start, stop, step} range")
    if not grid:
        err("snr_db grid is empty")
    return tuple(grid)


def config_from_dict(data: dict, lines: dict | None = None,
                     source: str | None = None) -> ExperimentConfig:
    """Validate a plain mapping and fill defaults."""
    lines = lines or {}

    def err(msg, *path):
        line = None
        for k in range(len(path), 0, -1):
            line = lines.get(tuple(path[:k]))
            if line is not None:
                break
        raise ConfigError(msg, line, source)

    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping", 1, source)
    for key in data:
        if key not in _KEYS:
            err(f"unknown key {key!r}", key)
    for key in ("N", "M_S", "J", "snr_db", "protocols", "seeds"):
        if key not in data:
            raise ConfigError(f"missing required key {key!r}", None, source)

    def integer(key, lo, default=None):
        v = data.get(key, default)
        if isinstance(v, bool) or not isinstance(v, int) or v < lo:
            err(f"{key} must be an integer >= {lo}", key)
        return v

    def number(key, default, lo=None):
        v = data.get(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            err(f"{key} must be a number", key)
        if lo is not None and v < lo:
            err(f"{key} must be >= {lo}", key)
        return float(v)

    N, M_S, U, J = integer("N", 1), integer("M_S", 1), integer("U", 1, 1), integer("J", 1)
    if J % M_S:
        err(f"buffer size must hold whole packet-sets (J={J} not divisible by M_S={M_S})", "J")
    constellation = str(data.get("constellation", "BPSK")).upper()
    try:
        build_constellation(constellation)
    except UnsupportedConstellation as e:
        err(str(e), "constellation")
    S = number("S", 1.0, lo=0)
    r0 = number("r0", 1.0)
    if r0 <= 0:
        err("r0 must be > 0", "r0")
    snr = _snr_grid(data["snr_db"], lambda m: err(m, "snr_db"))

    protos = data["protocols"]
    if not isinstance(protos, list) or not protos:
        err("protocols must be a nonempty list", "protocols")
    protocols = []
    for i, p in enumerate(protos):
        try:
            protocols.append(parse_protocol(p, default_switch=S, default_r0=r0))
        except ValueError as e:
            err(str(e), "protocols", i)

    seeds = data["seeds"]
    if not isinstance(seeds, list) or not seeds:
        err("seeds must be a nonempty list", "seeds")
    for i, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            err("seeds must be non-negative integers", "seeds", i)
    if len(set(seeds)) != len(seeds):
        err("seeds must be distinct", "seeds")

    packets = data.get("packets")
    if packets is not None:
        packets = integer("packets", M_S)
        if packets % M_S:
            err("packets must be a multiple of M_S", "packets")
    spp = integer("symbols_per_packet", 1, 100)

    var = data.get("variances", {}) or {}
    if not isinstance(var, dict) or set(var) - {"SR", "RD", "SD"}:
        err("variances takes keys SR, RD, SD", "variances")
    try:
        profile = LinkVarianceProfile(float(var.get("SR", 1.0)), float(var.get("RD", 1.0)),
                                      float(var.get("SD", 1.0)))
    except (TypeError, ValueError) as e:
        err(f"variances: {e}", "variances")

    csi = data.get("csi", {}) or {}
    if not isinstance(csi, dict) or set(csi) - {"beta", "alpha"}:
        err("csi takes keys beta, alpha", "csi")
    try:
        csi_model = CsiModel(float(csi.get("beta", 0.0)), float(csi.get("alpha", 0.0)))
    except (TypeError, ValueError) as e:
        err(f"csi: {e}", "csi")

    dt = data.get("dtmc", {}) or {}
    if not isinstance(dt, dict) or set(dt) - {"draws"}:
        err("dtmc takes the key draws", "dtmc")
    draws = dt.get("draws", 10_000)
    if isinstance(draws, bool) or not isinstance(draws, int) or draws < 1:
        err("dtmc.draws must be a positive integer", "dtmc", "draws")

    return ExperimentConfig(N, M_S, U, J, constellation, S, snr, tuple(protocols),
                            tuple(seeds), packets, spp, profile, csi_model, r0, draws)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark else None
        raise ConfigError(f"malformed YAML: {e.problem}", line, str(path)) from None
    if node is None:
        raise ConfigError("config is empty", None, str(path))
    return config_from_dict(data, _key_lines(node), str(path))
