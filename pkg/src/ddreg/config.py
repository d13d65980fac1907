"""Run configuration: schema, YAML loading with line tracking, bundled examples.

A run configuration collects everything needed to reproduce an experiment:
the true plant (simulation side), the exosystem, the internal-model recipe,
experiment parameters, synthesis parameters and evaluation parameters.
Loading goes through the YAML node tree so validation errors can cite the
offending line of the file.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field, asdict
from importlib import resources

import numpy as np
import yaml

from .errors import ConfigError
from .exo import ComplexMode, Exosystem, RealMode, SpectralSpec, minimal_poly_coeffs
from .imodel import InternalModel, build_companion, build_harmonic
from .plant import BasisLibrary, PlantModel

__all__ = [
    "ExperimentConfig",
    "SynthesisConfig",
    "EvalConfig",
    "RunConfig",
    "load_config",
    "dump_config",
    "bundled_config_path",
]


@dataclass(frozen=True)
class ExperimentConfig:
    samples: int = 40
    sample_period: float = 0.05
    step: float = 1e-3
    amplitude: float = 0.1
    hold: float | None = None
    seed: int = 0


@dataclass(frozen=True)
class SynthesisConfig:
    solver: str = "CLARABEL"
    objective: str = "feasibility"
    eps_pd: float = 1e-6
    alpha_min: float = 1e-4
    kappa: float = 1e4
    eps: float | None = None  # linear-mode slack; None means 1e-6 * ||Z1||
    R_Q: np.ndarray | None = None
    polish: bool = True


@dataclass(frozen=True)
class EvalConfig:
    seeds: int = 5
    seed: int = 1000
    init_amplitude: float = 1.0
    horizon_periods: int = 40
    settle_tol: float = 1e-6
    samples_per_period: int = 512
    step: float = 1e-3
    k_max: int | None = None
    nulling_rtol: float = 1e-3
    nulling_abs: float = 1e-6
    nulling_abs_switch: float = 1e-4


@dataclass
class RunConfig:
    """Everything needed to collect, synthesize and evaluate one scenario."""

    mode: str
    plant: PlantModel
    exo: Exosystem
    internal_model: dict
    experiment: ExperimentConfig
    synthesis: SynthesisConfig
    evaluation: EvalConfig
    output_dir: str = "runs"
    name: str = "run"
    raw: dict = field(default_factory=dict, repr=False)

    def build_internal_model(self, ell: int | None = None) -> InternalModel:
        """Instantiate the configured internal model, optionally overriding ell."""
        imc = self.internal_model
        if imc["kind"] == "harmonic":
            return build_harmonic(
                p=self.plant.p,
                ell=imc["ell"] if ell is None else int(ell),
                period=self.exo.period,
                gamma=imc.get("gamma", 1.0),
                N=imc.get("N", (0.0, 1.0)),
            )
        coeffs = imc.get("min_poly")
        if coeffs is None:
            coeffs = minimal_poly_coeffs(self.exo.spec)
        return build_companion(self.plant.p, coeffs)

    def config_hash(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# YAML loading with per-key line numbers
# ---------------------------------------------------------------------------


def _compose(text: str):
    """Convert YAML to plain data plus a map from key paths to line numbers."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as ex:
        raise ConfigError(f"YAML parse error: {ex}") from ex
    lines: dict[str, int] = {}

    def walk(nd, path):
        if isinstance(nd, yaml.MappingNode):
            out = {}
            for kn, vn in nd.value:
                key = str(kn.value)
                sub = f"{path}.{key}" if path else key
                lines[sub] = kn.start_mark.line + 1
                out[key] = walk(vn, sub)
            return out
        if isinstance(nd, yaml.SequenceNode):
            return [walk(v, f"{path}[{i}]") for i, v in enumerate(nd.value)]
        return _scalar(nd)

    def _scalar(nd):
        return yaml.SafeLoader("").construct_object(nd, deep=True)

    if node is None:
        return {}, lines
    return walk(node, ""), lines


class _Ctx:
    """Validation context carrying the source name and key line map."""

    def __init__(self, source: str, lines: dict[str, int]):
        self.source = source
        self.lines = lines

    def fail(self, path: str, msg: str):
        line = self.lines.get(path)
        loc = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{loc}: {msg}")

    def require(self, data: dict, path: str, key: str):
        if key not in data:
            self.fail(path or key, f"missing required key {key!r}" + (f" in {path!r}" if path else ""))
        return data[key]

    def check_keys(self, data: dict, path: str, allowed):
        for key in data:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else key, f"unknown key {key!r}")

    def matrix(self, data, path: str, shape=None) -> np.ndarray:
        try:
            M = np.array(data, dtype=float)
        except (TypeError, ValueError):
            self.fail(path, "expected a numeric array")
        M = np.atleast_2d(M)
        if shape is not None and M.shape != shape:
            self.fail(path, f"expected shape {shape}, got {M.shape}")
        return M


_TOP_KEYS = {"mode", "name", "output_dir", "plant", "exosystem", "internal_model",
             "experiment", "synthesis", "evaluation"}
_PLANT_KEYS = {"n", "m", "basis", "A", "B", "P", "C_e", "Q_e"}
_EXO_KEYS = {"S", "w0", "period", "modes"}
_IM_KEYS = {"kind", "ell", "gamma", "N", "min_poly"}
_EXP_KEYS = {"samples", "sample_period", "step", "amplitude", "hold", "seed"}
_SYN_KEYS = {"solver", "objective", "eps_pd", "alpha_min", "kappa", "eps", "R_Q", "polish"}
_EVAL_KEYS = {"seeds", "seed", "init_amplitude", "horizon_periods", "settle_tol",
              "samples_per_period", "step", "k_max", "nulling_rtol", "nulling_abs",
              "nulling_abs_switch"}

_BASIS_FNS = {"cos", "sin", "prod", "square", "cube"}


def _parse_basis(entries, n, ctx: _Ctx, path: str):
    terms = []
    for i, ent in enumerate(entries or []):
        p = f"{path}[{i}]"
        if not isinstance(ent, dict) or "fn" not in ent:
            ctx.fail(path, f"basis entry {i} must be a mapping with an 'fn' key")
        fn = ent["fn"]
        if fn not in _BASIS_FNS:
            ctx.fail(f"{p}.fn", f"unknown basis function {fn!r}")
        if fn == "prod":
            args = ent.get("args")
            if not isinstance(args, list) or len(args) != 2:
                ctx.fail(p, "prod terms need args: [i, j]")
            idx = [int(a) - 1 for a in args]  # config uses 1-based coordinates
        else:
            if "arg" not in ent:
                ctx.fail(p, f"{fn} terms need an 'arg' coordinate")
            idx = [int(ent["arg"]) - 1]
        if any(not (0 <= k < n) for k in idx):
            ctx.fail(p, f"basis term indexes outside 1..{n}")
        terms.append((fn, *idx))
    return tuple(terms)


def _parse_modes(entries, ctx: _Ctx, path: str) -> SpectralSpec:
    real, cplx = [], []
    if not entries:
        ctx.fail(path, "exosystem.modes must list at least one eigenvalue entry")
    for i, ent in enumerate(entries):
        p = f"{path}[{i}]"
        if not isinstance(ent, dict):
            ctx.fail(p, "each mode must be a mapping")
        blocks = ent.get("blocks")
        if blocks is None:
            blocks = [ent.get("block", 1)]
        blocks = tuple(sorted((int(b) for b in blocks), reverse=True))
        if "lambda" in ent:
            extra = set(ent) - {"lambda", "block", "blocks"}
            if extra:
                ctx.fail(p, f"unknown keys {sorted(extra)} in real mode")
            real.append(RealMode(float(ent["lambda"]), blocks))
        elif "mu" in ent or "psi" in ent:
            extra = set(ent) - {"mu", "psi", "block", "blocks"}
            if extra:
                ctx.fail(p, f"unknown keys {sorted(extra)} in complex mode")
            if "psi" not in ent:
                ctx.fail(p, "complex modes need both mu and psi")
            cplx.append(ComplexMode(float(ent.get("mu", 0.0)), float(ent["psi"]), blocks))
        else:
            ctx.fail(p, "mode needs either 'lambda' or 'mu'/'psi'")
    try:
        return SpectralSpec(tuple(real), tuple(cplx))
    except ValueError as ex:
        ctx.fail(path, str(ex))


def load_config(path_or_text, source: str | None = None) -> RunConfig:
    """Parse and validate a run configuration.

    Accepts a filesystem path or raw YAML text.  Errors carry
    ``file:line`` positions wherever the node is known.
    """
    if source is None and "\n" not in str(path_or_text):
        source = str(path_or_text)
        with open(path_or_text, "r") as fh:
            text = fh.read()
    else:
        text = str(path_or_text)
        source = source or "<config>"
    data, lines = _compose(text)
    ctx = _Ctx(source, lines)
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    ctx.check_keys(data, "", _TOP_KEYS)

    mode = data.get("mode", "nonlinear")
    if mode not in ("nonlinear", "linear"):
        ctx.fail("mode", f"mode must be 'nonlinear' or 'linear', got {mode!r}")

    pd = ctx.require(data, "", "plant")
    ctx.check_keys(pd, "plant", _PLANT_KEYS)
    n = int(ctx.require(pd, "plant", "n"))
    m = int(ctx.require(pd, "plant", "m"))
    basis = BasisLibrary(n, _parse_basis(pd.get("basis"), n, ctx, "plant.basis"))
    if mode == "linear" and basis.n_q:
        ctx.fail("plant.basis", "linear mode requires an empty basis")
    q = basis.q
    ed = ctx.require(data, "", "exosystem")
    ctx.check_keys(ed, "exosystem", _EXO_KEYS)
    S = ctx.matrix(ctx.require(ed, "exosystem", "S"), "exosystem.S")
    n_w = S.shape[0]
    if S.shape != (n_w, n_w):
        ctx.fail("exosystem.S", "S must be square")
    A = ctx.matrix(ctx.require(pd, "plant", "A"), "plant.A", (n, q))
    B = ctx.matrix(ctx.require(pd, "plant", "B"), "plant.B", (n, m))
    P = ctx.matrix(ctx.require(pd, "plant", "P"), "plant.P", (n, n_w))
    C_e = ctx.matrix(ctx.require(pd, "plant", "C_e"), "plant.C_e")
    if C_e.shape[1] != q:
        ctx.fail("plant.C_e", f"C_e must have {q} columns, got {C_e.shape[1]}")
    p = C_e.shape[0]
    Q_e = ctx.matrix(ctx.require(pd, "plant", "Q_e"), "plant.Q_e", (p, n_w))
    try:
        plant = PlantModel(basis, A, B, P, C_e, Q_e)
    except Exception as ex:
        ctx.fail("plant", str(ex))

    w0 = np.asarray(ctx.require(ed, "exosystem", "w0"), dtype=float).ravel()
    if w0.size != n_w:
        ctx.fail("exosystem.w0", f"w0 must have {n_w} entries, got {w0.size}")
    spec = _parse_modes(ctx.require(ed, "exosystem", "modes"), ctx, "exosystem.modes")
    period = ed.get("period")
    try:
        exo = Exosystem(S, w0, None if period is None else float(period), spec)
    except Exception as ex:
        ctx.fail("exosystem", str(ex))

    imd = ctx.require(data, "", "internal_model")
    ctx.check_keys(imd, "internal_model", _IM_KEYS)
    kind = imd.get("kind", "harmonic" if mode == "nonlinear" else "companion")
    if kind not in ("harmonic", "companion"):
        ctx.fail("internal_model.kind", f"kind must be 'harmonic' or 'companion', got {kind!r}")
    imc = {"kind": kind}
    if kind == "harmonic":
        if exo.period is None:
            ctx.fail("exosystem.period", "harmonic internal models need the exosystem period")
        imc["ell"] = int(imd.get("ell", 0))
        imc["gamma"] = float(imd.get("gamma", 1.0))
        Nv = np.asarray(imd.get("N", [0.0, 1.0]), dtype=float).ravel()
        if Nv.size != 2:
            ctx.fail("internal_model.N", "N must be a 2-vector")
        imc["N"] = tuple(float(v) for v in Nv)
    else:
        mp = imd.get("min_poly")
        imc["min_poly"] = None if mp is None else tuple(float(c) for c in mp)

    exd = dict(data.get("experiment", {}))
    ctx.check_keys(exd, "experiment", _EXP_KEYS)
    try:
        experiment = ExperimentConfig(
            samples=int(exd.get("samples", 40)),
            sample_period=float(exd.get("sample_period", 0.05)),
            step=float(exd.get("step", 1e-3)),
            amplitude=float(exd.get("amplitude", 0.1)),
            hold=None if exd.get("hold") is None else float(exd["hold"]),
            seed=int(exd.get("seed", 0)),
        )
    except (TypeError, ValueError) as ex:
        ctx.fail("experiment", str(ex))
    ratio = experiment.sample_period / experiment.step
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        ctx.fail("experiment.sample_period",
                 "sample_period must be an integer multiple of the step size")

    snd = dict(data.get("synthesis", {}))
    ctx.check_keys(snd, "synthesis", _SYN_KEYS)
    R_Q = None
    if "R_Q" in snd and snd["R_Q"] is not None:
        R_Q = ctx.matrix(snd["R_Q"], "synthesis.R_Q")
        if R_Q.shape[0] != n:
            ctx.fail("synthesis.R_Q", f"R_Q must have {n} rows, got {R_Q.shape[0]}")
    elif mode == "nonlinear" and basis.n_q:
        ctx.fail("synthesis", "nonlinear mode with library terms requires synthesis.R_Q")
    objective = snd.get("objective", "feasibility")
    if objective not in ("feasibility", "max_alpha"):
        ctx.fail("synthesis.objective", f"unknown objective {objective!r}")
    synthesis = SynthesisConfig(
        solver=str(snd.get("solver", "CLARABEL")),
        objective=objective,
        eps_pd=float(snd.get("eps_pd", 1e-6)),
        alpha_min=float(snd.get("alpha_min", 1e-4)),
        kappa=float(snd.get("kappa", 1e4)),
        eps=None if snd.get("eps") is None else float(snd["eps"]),
        R_Q=R_Q,
        polish=bool(snd.get("polish", True)),
    )

    evd = dict(data.get("evaluation", {}))
    ctx.check_keys(evd, "evaluation", _EVAL_KEYS)
    evaluation = EvalConfig(
        seeds=int(evd.get("seeds", 5)),
        seed=int(evd.get("seed", 1000)),
        init_amplitude=float(evd.get("init_amplitude", 1.0)),
        horizon_periods=int(evd.get("horizon_periods", 40)),
        settle_tol=float(evd.get("settle_tol", 1e-6)),
        samples_per_period=int(evd.get("samples_per_period", 512)),
        step=float(evd.get("step", 1e-3)),
        k_max=None if evd.get("k_max") is None else int(evd["k_max"]),
        nulling_rtol=float(evd.get("nulling_rtol", 1e-3)),
        nulling_abs=float(evd.get("nulling_abs", 1e-6)),
        nulling_abs_switch=float(evd.get("nulling_abs_switch", 1e-4)),
    )

    return RunConfig(
        mode=mode,
        plant=plant,
        exo=exo,
        internal_model=imc,
        experiment=experiment,
        synthesis=synthesis,
        evaluation=evaluation,
        output_dir=str(data.get("output_dir", "runs")),
        name=str(data.get("name", "run")),
        raw=data,
    )


def dump_config(cfg: RunConfig) -> str:
    """Serialize a configuration back to YAML (lossless round trip)."""
    plant, exo = cfg.plant, cfg.exo
    basis_entries = []
    for t in plant.basis.terms:
        if t[0] == "prod":
            basis_entries.append({"fn": "prod", "args": [t[1] + 1, t[2] + 1]})
        else:
            basis_entries.append({"fn": t[0], "arg": t[1] + 1})
    modes = []
    for mreal in exo.spec.real_modes:
        modes.append({"lambda": float(mreal.lam), "blocks": list(mreal.blocks)})
    for mc in exo.spec.complex_modes:
        modes.append({"mu": float(mc.mu), "psi": float(mc.psi), "blocks": list(mc.blocks)})
    imc = dict(cfg.internal_model)
    if "N" in imc:
        imc["N"] = list(imc["N"])
    if imc.get("min_poly") is not None:
        imc["min_poly"] = list(imc["min_poly"])
    data = {
        "name": cfg.name,
        "mode": cfg.mode,
        "output_dir": cfg.output_dir,
        "plant": {
            "n": plant.n,
            "m": plant.m,
            "basis": basis_entries,
            "A": plant.A.tolist(),
            "B": plant.B.tolist(),
            "P": plant.P.tolist(),
            "C_e": plant.C_e.tolist(),
            "Q_e": plant.Q_e.tolist(),
        },
        "exosystem": {
            "S": exo.S.tolist(),
            "w0": exo.w0.tolist(),
            "period": exo.period,
            "modes": modes,
        },
        "internal_model": imc,
        "experiment": {k: v for k, v in asdict(cfg.experiment).items() if v is not None},
        "synthesis": {
            **{k: v for k, v in asdict(cfg.synthesis).items() if k != "R_Q" and v is not None},
            **({"R_Q": cfg.synthesis.R_Q.tolist()} if cfg.synthesis.R_Q is not None else {}),
        },
        "evaluation": {k: v for k, v in asdict(cfg.evaluation).items() if v is not None},
    }
    buf = io.StringIO()
    yaml.safe_dump(_plain(data), buf, sort_keys=False, default_flow_style=None)
    return buf.getvalue()


def _plain(obj):
    """Coerce numpy scalars and arrays to native Python for serialization."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def bundled_config_path(name: str):
    """Path of a packaged example configuration ('robot-arm' or 'rolling-mill')."""
    fname = {"robot-arm": "robot_arm.yaml", "rolling-mill": "rolling_mill.yaml"}.get(name)
    if fname is None:
        raise ConfigError(f"no bundled configuration named {name!r}")
    return resources.files("ddreg.configs") / fname
