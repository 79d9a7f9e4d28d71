"""YAML experiment configuration with strict, located validation.

Grammar (all top-level sections required except ``outputs``)::

    system:
      label: qubit                      # optional
      hamiltonian: [[c, c], [c, c]]     # c = [re, im] or a real number
      coupling:    [[c, c], [c, c]]
      initial:     [c, c]               # optional, default: last basis state
    kernel:                             # exactly one of
      markov: {gamma: 1.0}
      exponential: {gamma: 1.0, lambda: 2.0}
      samples: [c, c, ...]              # explicit kappa_k, length N
      correlation: [c, c, ...]          # alpha_m, factorized to length N
    lattice: {dt: 0.01, N: 1, n_max: 2, dim_cap: 4096}
    run: {steps: 300, trajectories: 1, seed: 1234}
    outputs: {directory: out, formats: [csv]}
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .hilbert import DEFAULT_DIM_CAP
from .kernel import CorrelationFunction, CouplingKernel, factorize
from .lattice import CollisionModel, LatticeConfig, SystemSpec


class ConfigError(ValueError):
    def __init__(self, message: str, path: tuple = (), line: int | None = None):
        self.path = path
        self.line = line
        where = "/".join(str(p) for p in path) or "<root>"
        loc = f"{where}" + (f" (line {line})" if line is not None else "")
        super().__init__(f"config error at {loc}: {message}")


_SCHEMA: dict[str, set[str]] = {
    "system": {"label", "hamiltonian", "coupling", "initial"},
    "kernel": {"markov", "exponential", "samples", "correlation"},
    "lattice": {"dt", "N", "n_max", "dim_cap"},
    "run": {"steps", "trajectories", "seed"},
    "outputs": {"directory", "formats"},
}
_FAMILY_KEYS = {"markov": {"gamma"}, "exponential": {"gamma", "lambda"}}
FORMATS = ("csv", "json")


@dataclass(frozen=True)
class RunConfig:
    steps: int
    trajectories: int = 1
    seed: int = 0


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv",)


@dataclass
class ExperimentConfig:
    system: SystemSpec
    initial: np.ndarray
    kernel: CouplingKernel
    lattice: LatticeConfig
    run: RunConfig
    outputs: OutputConfig
    raw: dict = field(repr=False, default_factory=dict)
    factorization_residual: float | None = None

    def model(self) -> CollisionModel:
        return CollisionModel(self.system, self.kernel, self.lattice)

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, directory: str | None = None,
                       fmt: str | None = None) -> "ExperimentConfig":
        raw = json.loads(json.dumps(self.raw))
        if seed is not None:
            raw["run"]["seed"] = int(seed)
        if directory is not None:
            raw.setdefault("outputs", {})["directory"] = directory
        if fmt is not None:
            raw.setdefault("outputs", {})["formats"] = [fmt]
        return _build(raw, {})


def _line_map(text: str) -> dict[tuple, int]:
    lines: dict[tuple, int] = {}

    def walk(node, path):
        lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                lines[path + (key,)] = k.start_mark.line + 1
                walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if root is not None:
        walk(root, ())
    return lines


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}", (), mark.line + 1 if mark else None) from None
    return _build(raw, _line_map(text))


def _build(raw: Any, lines: dict[tuple, int]) -> ExperimentConfig:
    def err(msg, path=()):
        return ConfigError(msg, path, lines.get(path))

    if not isinstance(raw, dict):
        raise err("top level must be a mapping")
    for key in raw:
        if key not in _SCHEMA:
            raise err(f"unknown key {key!r}", (key,))
    for section in ("system", "kernel", "lattice", "run"):
        if section not in raw:
            raise err(f"missing section {section!r}")
    for section, allowed in _SCHEMA.items():
        body = raw.get(section)
        if body is None and section == "outputs":
            continue
        if not isinstance(body, dict):
            raise err("must be a mapping", (section,))
        for key in body:
            if key not in allowed:
                raise err(f"unknown key {key!r}", (section, key))

    def number(path, kind=float, positive=False, minimum=None):
        node: Any = raw
        for p in path:
            node = node[p]
        if isinstance(node, bool) or not isinstance(node, (int, float)):
            raise err(f"expected a number, got {node!r}", path)
        if kind is int and (not float(node).is_integer()):
            raise err(f"expected an integer, got {node!r}", path)
        value = kind(node)
        if not math.isfinite(value):
            raise err("must be finite", path)
        if positive and not value > 0:
            raise err(f"must be positive, got {value}", path)
        if minimum is not None and value < minimum:
            raise err(f"must be >= {minimum}, got {value}", path)
        return value

    def cplx(node, path):
        if isinstance(node, bool):
            raise err("expected a number or [re, im]", path)
        if isinstance(node, (int, float)):
            return complex(node)
        if isinstance(node, list) and len(node) == 2 and all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in node):
            return complex(node[0], node[1])
        raise err(f"expected a number or [re, im] pair, got {node!r}", path)

    def vector(path):
        node = raw
        for p in path:
            node = node[p]
        if not isinstance(node, list) or not node:
            raise err("expected a non-empty list", path)
        return np.array([cplx(x, path + (i,)) for i, x in enumerate(node)])

    def matrix(path):
        node = raw
        for p in path:
            node = node[p]
        if not isinstance(node, list) or not node or not all(isinstance(r, list) for r in node):
            raise err("expected a nested list of rows", path)
        n = len(node)
        rows = []
        for i, r in enumerate(node):
            if len(r) != n:
                raise err(f"row {i} has {len(r)} entries, expected {n} (square matrix)", path + (i,))
            rows.append([cplx(x, path + (i, j)) for j, x in enumerate(r)])
        return np.array(rows)

    system = raw["system"]
    for key in ("hamiltonian", "coupling"):
        if key not in system:
            raise err(f"missing key {key!r}", ("system",))
    h = matrix(("system", "hamiltonian"))
    s = matrix(("system", "coupling"))
    if s.shape != h.shape:
        raise err(f"coupling is {s.shape[0]}x{s.shape[0]} but hamiltonian is "
                  f"{h.shape[0]}x{h.shape[0]}", ("system", "coupling"))
    try:
        sys_spec = SystemSpec(h, s, str(system.get("label", "")))
    except ValueError as exc:
        raise err(str(exc), ("system", "hamiltonian")) from None
    if "initial" in system:
        psi0 = vector(("system", "initial"))
        if psi0.shape[0] != h.shape[0]:
            raise err(f"initial state has {psi0.shape[0]} amplitudes, system dimension is "
                      f"{h.shape[0]}", ("system", "initial"))
        norm = np.linalg.norm(psi0)
        if not norm > 0:
            raise err("initial state is zero", ("system", "initial"))
        psi0 = psi0 / norm
    else:
        psi0 = np.zeros(h.shape[0], dtype=complex)
        psi0[-1] = 1.0

    dt = number(("lattice", "dt"), positive=True)
    if "N" not in raw["lattice"]:
        raise err("missing key 'N'", ("lattice",))
    n_bins = number(("lattice", "N"), int, minimum=1)
    n_max = number(("lattice", "n_max"), int, minimum=1) if "n_max" in raw["lattice"] else 2
    cap = number(("lattice", "dim_cap"), int, minimum=1) if "dim_cap" in raw["lattice"] \
        else DEFAULT_DIM_CAP
    total = h.shape[0] * (n_max + 1) ** n_bins
    if total > cap:
        raise err(f"joint dimension {h.shape[0]}*{n_max + 1}^{n_bins} = {total} exceeds "
                  f"dim_cap {cap}", ("lattice", "N"))
    lattice = LatticeConfig(dt, n_bins, n_max, cap)

    kernel_raw = raw["kernel"]
    if len(kernel_raw) != 1:
        raise err(f"exactly one of {sorted(_SCHEMA['kernel'])} required, got "
                  f"{sorted(kernel_raw)}", ("kernel",))
    (family, params), = kernel_raw.items()
    residual = None
    if family in _FAMILY_KEYS:
        if not isinstance(params, dict):
            raise err("must be a mapping", ("kernel", family))
        for key in params:
            if key not in _FAMILY_KEYS[family]:
                raise err(f"unknown key {key!r}", ("kernel", family, key))
        for key in _FAMILY_KEYS[family]:
            if key not in params:
                raise err(f"missing key {key!r}", ("kernel", family))
        gamma = number(("kernel", family, "gamma"), positive=True)
        if family == "markov":
            if n_bins != 1:
                raise err(f"markov kernel needs N = 1, lattice has N = {n_bins}", ("lattice", "N"))
            kappa = CouplingKernel.markov(gamma, dt)
        else:
            lam = number(("kernel", family, "lambda"), positive=True)
            kappa = CouplingKernel.exponential(gamma, lam, dt, n_bins)
    elif family == "samples":
        samples = vector(("kernel", "samples"))
        if samples.shape[0] != n_bins:
            raise err(f"{samples.shape[0]} kernel samples but lattice N = {n_bins}",
                      ("kernel", "samples"))
        kappa = CouplingKernel(dt, samples)
    else:
        alpha = CorrelationFunction(dt, vector(("kernel", "correlation")))
        try:
            fac = factorize(alpha, n_bins)
        except ValueError as exc:
            raise err(str(exc), ("kernel", "correlation")) from None
        kappa, residual = fac.kernel, fac.residual

    run = raw["run"]
    if "steps" not in run:
        raise err("missing key 'steps'", ("run",))
    run_cfg = RunConfig(number(("run", "steps"), int, minimum=1),
                        number(("run", "trajectories"), int, minimum=1)
                        if "trajectories" in run else 1,
                        number(("run", "seed"), int, minimum=0) if "seed" in run else 0)

    out = raw.get("outputs") or {}
    directory = out.get("directory", "out")
    if not isinstance(directory, str) or not directory:
        raise err("directory must be a non-empty string", ("outputs", "directory"))
    formats = out.get("formats", ["csv"])
    if isinstance(formats, str):
        formats = [formats]
    if not isinstance(formats, list) or not formats:
        raise err("formats must be a non-empty list", ("outputs", "formats"))
    for i, f in enumerate(formats):
        if f not in FORMATS:
            raise err(f"unknown format {f!r}; choose from {FORMATS}", ("outputs", "formats", i))

    return ExperimentConfig(sys_spec, psi0, kappa, lattice, run_cfg,
                            OutputConfig(directory, tuple(formats)), raw, residual)
