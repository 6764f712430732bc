"""Run configuration, initial-data presets and field snapshots.

Configuration files are flat ``dotted.key = value`` lines where every value
is a JSON literal; ``#`` starts a comment line.  Example::

    scenario = "simulate"
    spectral.n_modes = [33]
    kernel.params.sigma = 0.1
    params.dt = 0.001

Unspecified keys take the defaults of :data:`DEFAULTS`.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Params, ParamsError, State
from .kernel import FAMILIES, Kernel, KernelError, build_kernel, load_kernel_table
from .potential import Potential, PotentialError
from .spectral import SpectralError, SpectralSpace

SCENARIOS = ("simulate", "sweep", "limit_study", "certify", "oracle_check", "contdep")
PRESETS = ("constant", "quench1d", "quench2d", "roughtheta", "pair")
SWEEP_AXES = ("alpha", "epsilon", "delta")
MIN_MODES = 9
OUTPUT_ENV = "NLCH_OUTPUT_DIR"
SNAPSHOT_MAGIC = "nlch-snapshot"


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "scenario": "simulate",
    "spectral": {"dims": 1, "lengths": [1.0], "n_modes": [33]},
    "kernel": {"family": "gaussian", "params": {"sigma": 0.1, "amplitude": 10.0}},
    "potential": {"coefficients": [1.0, 0.0, -2.0, 0.0, 1.0], "amplitude": 1.0},
    "params": {"alpha": 0.1, "epsilon": 0.1, "delta": 0.1, "delta0": 0.1, "dt": 0.001, "t_end": 3.0,
               "stabilization": None, "scheme": "imex_stabilized", "mean_cap": 1.0},
    "initial_data": {"preset": "quench1d", "seed": 0, "mean": 0.0, "theta_mean": 0.0, "amplitude": 0.01,
                     "theta_amplitude": 1.0, "n_random_modes": 8, "perturbation": 0.001,
                     "phi_file": None, "theta_file": None},
    "outputs": {"directory": "runs/default", "snapshot_stride": 500, "ledger_stride": 1, "steady_tol": 1e-8},
    "study": {"axis": "epsilon", "values": [1.0, 0.1, 0.01], "epsilons": [0.1, 0.01, 0.001, 0.0001],
              "delta": 0.5, "n_modes": 8, "dts": [4e-4, 2e-4, 1e-4, 1e-5], "dt_ref": 1e-5, "t_end": 0.1,
              "n_pairs": 20},
}


# -- flat text format -----------------------------------------------------------


def _flatten(d: dict, prefix: str = "") -> list[tuple[str, object]]:
    out = []
    for key in sorted(d):
        value = d[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict) and value:
            out.extend(_flatten(value, name + "."))
        else:
            out.append((name, value))
    return out


def dumps(d: dict) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in _flatten(d))


def loads(text: str) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {lineno}: value for {key!r} is not a JSON literal ({exc.msg})") from None
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"line {lineno}: {key!r} conflicts with an earlier scalar key")
        node[parts[-1]] = parsed
    return out


# -- RunConfig ------------------------------------------------------------------


@dataclass
class RunConfig:
    scenario: str = DEFAULTS["scenario"]
    spectral: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["spectral"]))
    kernel: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["kernel"]))
    potential: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["potential"]))
    params: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["params"]))
    initial_data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["initial_data"]))
    outputs: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["outputs"]))
    study: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["study"]))
    base_dir: str = field(default=".", compare=False)

    SECTIONS = ("scenario", "spectral", "kernel", "potential", "params", "initial_data", "outputs", "study")

    def to_dict(self) -> dict:
        return {s: copy.deepcopy(getattr(self, s)) for s in self.SECTIONS}

    def dumps(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".", validate: bool = True) -> "RunConfig":
        unknown = set(d) - set(cls.SECTIONS)
        if unknown:
            raise ConfigError(f"unknown configuration sections: {sorted(unknown)}")
        merged = {}
        for s in cls.SECTIONS:
            default = DEFAULTS[s]
            if s not in d:
                merged[s] = copy.deepcopy(default)
            elif isinstance(default, dict):
                if not isinstance(d[s], dict):
                    raise ConfigError(f"section {s!r} must be a table of keys")
                merged[s] = copy.deepcopy(default)
                for key, value in d[s].items():
                    if s == "kernel" and key == "params":
                        merged[s]["params"] = copy.deepcopy(value)
                    elif key not in default:
                        raise ConfigError(f"unknown key {s}.{key}")
                    else:
                        merged[s][key] = copy.deepcopy(value)
            else:
                merged[s] = d[s]
        cfg = cls(**merged, base_dir=str(base_dir))
        if validate:
            cfg.validate()
        return cfg

    @classmethod
    def loads(cls, text: str, base_dir: str = ".", validate: bool = True) -> "RunConfig":
        return cls.from_dict(loads(text), base_dir, validate)

    @classmethod
    def load(cls, path, validate: bool = True) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"configuration file {path} does not exist")
        return cls.loads(path.read_text(), str(path.parent), validate)

    def save(self, path):
        Path(path).write_text(self.dumps())

    def replace(self, **sections) -> "RunConfig":
        d = self.to_dict()
        for k, v in sections.items():
            if isinstance(v, dict):
                d[k] = {**d[k], **v}
            else:
                d[k] = v
        return RunConfig.from_dict(d, self.base_dir)

    def resolve(self, name) -> Path | None:
        if name is None:
            return None
        p = Path(name)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # -- validation and construction ---------------------------------------------

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        sp = self.space()
        if any(n < MIN_MODES for n in sp.n_modes):
            raise ConfigError(f"n_modes must be >= {MIN_MODES} per axis, got {list(sp.n_modes)}")
        self.make_params()
        if self.kernel.get("family") not in FAMILIES:
            raise ConfigError(f"kernel.family must be one of {FAMILIES}, got {self.kernel.get('family')!r}")
        if self.kernel["family"] == "table":
            path = self.resolve(self.kernel["params"].get("path"))
            if path is None or not path.is_file():
                raise ConfigError(f"kernel table file {path} does not exist")
        self.make_potential()
        out = self.outputs
        for key in ("snapshot_stride", "ledger_stride"):
            if not isinstance(out[key], int) or out[key] < 1:
                raise ConfigError(f"outputs.{key} must be an integer >= 1, got {out[key]!r}")
        ini = self.initial_data
        if ini["preset"] not in PRESETS and ini["preset"] != "files":
            raise ConfigError(f"initial_data.preset must be one of {PRESETS + ('files',)}, got {ini['preset']!r}")
        if ini["preset"] == "quench1d" and sp.dims != 1 or ini["preset"] == "quench2d" and sp.dims != 2:
            raise ConfigError(f"preset {ini['preset']!r} does not match dims = {sp.dims}")
        for key in ("phi_file", "theta_file"):
            path = self.resolve(ini.get(key))
            if ini["preset"] == "files" and key == "phi_file" and path is None:
                raise ConfigError("preset 'files' requires initial_data.phi_file")
            if path is not None and not path.is_file():
                raise ConfigError(f"initial_data.{key}: file {path} does not exist")
        st = self.study
        if st["axis"] not in SWEEP_AXES:
            raise ConfigError(f"study.axis must be one of {SWEEP_AXES}, got {st['axis']!r}")
        if self.scenario == "sweep":
            for v in st["values"]:
                try:
                    self.make_params(**{st["axis"]: v})
                except ParamsError as exc:
                    raise ConfigError(f"sweep value {st['axis']} = {v}: {exc}") from None
        if self.scenario == "limit_study":
            eps = list(st["epsilons"])
            if any(b >= a for a, b in zip(eps, eps[1:])):
                raise ConfigError(f"study.epsilons must be strictly decreasing, got {eps}")
            for e in eps:
                try:
                    self.make_params(epsilon=e, delta=st["delta"], delta0=max(self.params["delta0"], st["delta"]))
                except ParamsError as exc:
                    raise ConfigError(f"limit study epsilon = {e}: {exc}") from None
        if self.scenario == "oracle_check" and not 2 <= int(st["n_modes"]) <= 16:
            raise ConfigError("study.n_modes for oracle_check must lie in [2, 16]")

    def space(self) -> SpectralSpace:
        s = self.spectral
        try:
            return SpectralSpace(int(s["dims"]), tuple(s["lengths"]), tuple(s["n_modes"]))
        except (SpectralError, TypeError, ValueError) as exc:
            raise ConfigError(f"spectral: {exc}") from None

    def make_params(self, **over) -> Params:
        try:
            return Params(**{**self.params, **over})
        except (ParamsError, TypeError) as exc:
            raise ConfigError(f"params: {exc}") from None

    def make_potential(self) -> Potential:
        try:
            return Potential(self.potential["coefficients"], self.potential["amplitude"])
        except (PotentialError, TypeError) as exc:
            raise ConfigError(f"potential: {exc}") from None

    def make_kernel(self, sp: SpectralSpace | None = None, validate: bool = True) -> Kernel:
        sp = sp or self.space()
        params = dict(self.kernel["params"])
        if self.kernel["family"] == "table":
            table = load_kernel_table(self.resolve(params["path"]))
            params = {**table, "amplitude": params.get("amplitude", 1.0)}
        try:
            return build_kernel(self.kernel["family"], params, sp, validate=validate)
        except (KernelError, TypeError) as exc:
            raise ConfigError(f"kernel: {exc}") from None

    def output_dir(self, override=None) -> Path:
        if override:
            return Path(override)
        env = os.environ.get(OUTPUT_ENV)
        if env:
            return Path(env)
        return self.resolve(self.outputs["directory"])


# -- presets ------------------------------------------------------------------


def _random_cosines(sp: SpectralSpace, rng: np.random.Generator, n_random: int, amplitude: float) -> np.ndarray:
    """Band-limited zero-mean field built from modes 1..n_random, scaled so max|f| = amplitude."""
    c = np.zeros(sp.shape)
    band = [min(n_random, n - 1) for n in sp.n_modes]
    idx = tuple(slice(0, b + 1) for b in band)
    c[idx] = rng.uniform(-1.0, 1.0, size=tuple(b + 1 for b in band))
    c.flat[0] = 0.0
    f = sp.inverse(c)
    peak = float(np.max(np.abs(f)))
    return f * (amplitude / peak) if peak > 0 else f


def initial_fields(cfg: RunConfig, sp: SpectralSpace | None = None, seed: int | None = None):
    """(phi0, theta0) for the configured preset; the 'pair' preset returns the unperturbed member."""
    sp = sp or cfg.space()
    ini = cfg.initial_data
    seed = ini["seed"] if seed is None else seed
    rng = np.random.default_rng(seed)
    m, n = float(ini["mean"]), float(ini["theta_mean"])
    preset = ini["preset"]
    if preset == "files":
        phi = read_snapshot(cfg.resolve(ini["phi_file"]), sp)[0]
        tpath = cfg.resolve(ini.get("theta_file"))
        theta = read_snapshot(tpath, sp)[0] if tpath is not None else sp.constant(n)
        return phi, theta
    if preset == "constant":
        return sp.constant(m), sp.constant(n)
    phi = m + _random_cosines(sp, rng, int(ini["n_random_modes"]), float(ini["amplitude"]))
    if preset == "roughtheta":
        rough = rng.uniform(-1.0, 1.0, size=sp.shape)
        rough = rough - rough.mean()
        theta = n + float(ini["theta_amplitude"]) * rough / np.max(np.abs(rough))
    else:
        theta = sp.constant(n)
    return phi, theta


def perturbation(cfg: RunConfig, sp: SpectralSpace, rng: np.random.Generator, size: float) -> tuple:
    """Zero-mean smooth perturbations of (phi, theta) with L2 norm ``size`` each."""
    out = []
    for _ in range(2):
        f = _random_cosines(sp, rng, int(cfg.initial_data["n_random_modes"]), 1.0)
        out.append(f * (size / sp.norm(f)))
    return tuple(out)


def initial_state(cfg: RunConfig, sp: SpectralSpace | None = None, seed: int | None = None) -> State:
    sp = sp or cfg.space()
    phi, theta = initial_fields(cfg, sp, seed)
    try:
        return State.initial(sp, phi, theta, cfg.make_params())
    except ParamsError as exc:
        raise ConfigError(str(exc)) from None


# -- snapshots ----------------------------------------------------------------


def write_snapshot(path, f: np.ndarray, sp: SpectralSpace, t: float = 0.0, name: str = "phi"):
    """JSON header line, then raw little-endian float64 values in row-major order."""
    f = np.ascontiguousarray(sp._check(f), dtype="<f8")
    header = {"format": SNAPSHOT_MAGIC, "dims": sp.dims, "lengths": list(sp.lengths), "n_modes": list(sp.n_modes),
              "t": float(t), "field": name, "dtype": "<f8"}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(f.tobytes(order="C"))


def read_snapshot(path, sp: SpectralSpace | None = None) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line)
        except json.JSONDecodeError:
            raise ConfigError(f"{path}: not a snapshot file") from None
        if header.get("format") != SNAPSHOT_MAGIC:
            raise ConfigError(f"{path}: not a snapshot file")
        data = np.frombuffer(fh.read(), dtype="<f8")
    shape = tuple(header["n_modes"])
    if data.size != int(np.prod(shape)):
        raise ConfigError(f"{path}: expected {int(np.prod(shape))} values, found {data.size}")
    if sp is not None and (shape != sp.shape or tuple(header["lengths"]) != sp.lengths):
        raise ConfigError(f"{path}: snapshot grid {shape} does not match the configured space {sp.shape}")
    return data.reshape(shape).astype(float), header
