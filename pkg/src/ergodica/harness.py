"""Experiment orchestration: TOML configs, seeded sweeps and report files.

One config describes one experiment.  All randomness derives from the
root seed through named substreams, so re-running a config reproduces
every CSV byte for byte whatever the thread count.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import BadParameter, ConfigError, ErgodicaError

EXPERIMENTS = ("invariant-sweep", "rate-fit", "bound-check", "operator-convergence", "likelihood-sweep")
TRANSITION_KINDS = ("ar1", "contraction", "log_growth", "linear_gaussian")
SEED_ENV = "ERGODICA_SEED"

_SCHEMA = {
    "": {"seed", "experiment", "threads", "out", "model", "approximation", "measurement_approximation",
         "sweep", "particles", "metric", "bound", "rate", "likelihood"},
    "model": {"kind", "a", "sigma", "sigma_w", "sigma_y", "c", "shift", "alpha", "beta", "partition", "obs_dim"},
    "approximation": {"scheme", "scale", "power", "level", "radius0", "radius_growth", "mesh0", "mesh_power",
                      "center", "floor"},
    "sweep": {"j"},
    "particles": {"n", "burn_in", "mode", "thinning"},
    "metric": {"mc_n", "grid_points", "radii", "center", "bank_centers", "bank_slopes"},
    "bound": {"epsilon", "lipschitz", "clip"},
    "rate": {"n_max", "mc_n", "grid", "f", "noise_factor"},
    "likelihood": {"T", "data", "data_seed", "datasets", "batches", "invariant_particles", "xi"},
}
_SCHEMA["measurement_approximation"] = _SCHEMA["approximation"]


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    experiment: str
    seed: Optional[int]
    threads: int
    out: str
    model: dict
    approximation: Optional[dict]
    measurement_approximation: Optional[dict]
    j: list
    particles: dict
    metric: dict
    bound: dict
    rate: dict
    likelihood: dict
    raw: dict = field(default_factory=dict)
    base_dir: Path = Path(".")


def _num(table, key, field_path, diags, *, kind=float, lo=None, lo_strict=False, default=None):
    v = table.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and not isinstance(v, int)):
        diags.append(ConfigError(f"expected {'an integer' if kind is int else 'a number'}, got {v!r}",
                                 f"{field_path}.{key}" if field_path else key))
        return default
    if lo is not None and (v <= lo if lo_strict else v < lo):
        rel = ">" if lo_strict else ">="
        diags.append(ConfigError(f"must be {rel} {lo}, got {v!r}", f"{field_path}.{key}" if field_path else key))
        return default
    return v


def _check_keys(table, section, diags):
    allowed = _SCHEMA[section]
    for k in table:
        if k not in allowed:
            diags.append(ConfigError("unknown key", f"{section}.{k}" if section else k))


def parse_config(raw: dict, base_dir=".") -> tuple[Optional[ExperimentConfig], list[ConfigError]]:
    """Schema and cross-field checks; returns ``(config or None, diagnostics)``."""
    diags: list[ConfigError] = []
    _check_keys(raw, "", diags)
    sections = {}
    for sec in _SCHEMA:
        if not sec:
            continue
        t = raw.get(sec, {})
        if not isinstance(t, dict):
            diags.append(ConfigError("must be a table", sec))
            t = {}
        _check_keys(t, sec, diags)
        sections[sec] = t

    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        diags.append(ConfigError(f"must be one of {', '.join(EXPERIMENTS)}; got {exp!r}", "experiment"))
    seed = _num(raw, "seed", "", diags, kind=int, lo=0)
    threads = _num(raw, "threads", "", diags, kind=int, lo=1, default=1)
    out = raw.get("out", "out")
    if not isinstance(out, str):
        diags.append(ConfigError("must be a string", "out"))
        out = "out"

    model = sections["model"]
    if "kind" not in model:
        diags.append(ConfigError("missing model kind", "model.kind"))
    else:
        _validate_model(model, diags, need_state_space=exp == "likelihood-sweep")

    approx = sections["approximation"] or None
    mapprox = sections["measurement_approximation"] or None
    for name, t in (("approximation", approx), ("measurement_approximation", mapprox)):
        if t is not None:
            _validate_scheme(t, name, diags)
    if exp in ("invariant-sweep", "bound-check", "operator-convergence") and approx is None:
        diags.append(ConfigError(f"experiment {exp!r} needs an approximation scheme", "approximation"))
    if exp == "likelihood-sweep" and approx is None and mapprox is None:
        diags.append(ConfigError("likelihood-sweep needs [approximation] and/or [measurement_approximation]",
                                 "approximation"))

    j = sections["sweep"].get("j", [1])
    if (not isinstance(j, list) or not j or any(isinstance(x, bool) or not isinstance(x, int) for x in j)):
        diags.append(ConfigError("must be a nonempty list of integers", "sweep.j"))
        j = [1]
    elif any(x < 1 for x in j):
        diags.append(ConfigError("indices must be >= 1", "sweep.j"))
    elif any(b <= a for a, b in zip(j, j[1:])):
        diags.append(ConfigError("must be strictly ascending", "sweep.j"))

    p = sections["particles"]
    particles = {
        "n": _num(p, "n", "particles", diags, kind=int, lo=100, default=1000),
        "burn_in": _num(p, "burn_in", "particles", diags, kind=int, lo=0, default=200),
        "thinning": _num(p, "thinning", "particles", diags, kind=int, lo=1, default=1),
        "mode": p.get("mode", "cloud"),
    }
    if particles["mode"] not in ("cloud", "path"):
        diags.append(ConfigError("must be 'cloud' or 'path'", "particles.mode"))

    m = sections["metric"]
    metric = {
        "mc_n": _num(m, "mc_n", "metric", diags, kind=int, lo=100, default=500),
        "grid_points": _num(m, "grid_points", "metric", diags, kind=int, lo=2, default=21),
        "radii": m.get("radii", [2.0, 4.0, 8.0]),
        "center": _num(m, "center", "metric", diags, default=0.0),
        "bank_centers": m.get("bank_centers"),
        "bank_slopes": m.get("bank_slopes", [1.0, 0.5]),
    }
    r = metric["radii"]
    if (not isinstance(r, list) or not r or any(not isinstance(x, (int, float)) or x <= 0 for x in r)
            or any(b <= a for a, b in zip(r, r[1:]))):
        diags.append(ConfigError("must be a strictly increasing list of positive radii", "metric.radii"))
    sl = metric["bank_slopes"]
    if not isinstance(sl, list) or not sl or any(not isinstance(x, (int, float)) or not 0 < x <= 1 for x in sl):
        diags.append(ConfigError("slopes must lie in (0, 1]", "metric.bank_slopes"))
    bc = metric["bank_centers"]
    if bc is not None and (not isinstance(bc, list) or not bc or any(not isinstance(x, (int, float)) for x in bc)):
        diags.append(ConfigError("must be a nonempty list of numbers", "metric.bank_centers"))

    b = sections["bound"]
    bound = {
        "epsilon": _num(b, "epsilon", "bound", diags, lo=0, lo_strict=True),
        "lipschitz": _num(b, "lipschitz", "bound", diags, lo=0, lo_strict=True, default=1.0),
        "clip": _num(b, "clip", "bound", diags, lo=0, lo_strict=True, default=50.0),
    }

    rt = sections["rate"]
    rate = {
        "n_max": _num(rt, "n_max", "rate", diags, kind=int, lo=5, default=40),
        "mc_n": _num(rt, "mc_n", "rate", diags, kind=int, lo=100, default=100_000),
        "grid": rt.get("grid", [-10.0, 10.0, 5]),
        "f": rt.get("f", "identity"),
        "noise_factor": _num(rt, "noise_factor", "rate", diags, lo=0, lo_strict=True, default=10.0),
    }
    g = rate["grid"]
    if (not isinstance(g, list) or len(g) != 3 or not all(isinstance(x, (int, float)) for x in g)
            or not isinstance(g[2], int) or g[2] < 1 or g[1] < g[0]):
        diags.append(ConfigError("must be [low, high, points] with low <= high and points >= 1", "rate.grid"))
    if rate["f"] not in ("identity", "tanh"):
        diags.append(ConfigError("must be 'identity' or 'tanh'", "rate.f"))

    lk = sections["likelihood"]
    lik = {
        "T": _num(lk, "T", "likelihood", diags, kind=int, lo=1, default=100),
        "data": lk.get("data"),
        "data_seed": _num(lk, "data_seed", "likelihood", diags, kind=int, lo=0),
        "datasets": _num(lk, "datasets", "likelihood", diags, kind=int, lo=1, default=1),
        "batches": _num(lk, "batches", "likelihood", diags, kind=int, lo=2, default=20),
        "invariant_particles": _num(lk, "invariant_particles", "likelihood", diags, kind=int, lo=100,
                                    default=20_000),
        "xi": _num(lk, "xi", "likelihood", diags, lo=0, lo_strict=True, default=1e-300),
    }
    if lik["data"] is not None and not isinstance(lik["data"], str):
        diags.append(ConfigError("must be a path string", "likelihood.data"))
    if lik["data"] is not None and lik["datasets"] != 1:
        diags.append(ConfigError("a data file gives exactly one data set", "likelihood.datasets"))

    if diags:
        return None, diags
    cfg = ExperimentConfig(exp, seed, threads, out, dict(model), approx, mapprox, list(j), particles, metric,
                           bound, rate, lik, raw=raw, base_dir=Path(base_dir))
    return cfg, diags


def _validate_model(model, diags, need_state_space):
    from .dynsys import model_from_config

    kind = model["kind"]
    if kind not in TRANSITION_KINDS:
        diags.append(ConfigError(f"unknown model kind {kind!r}; expected one of {', '.join(TRANSITION_KINDS)}",
                                 "model.kind"))
        return
    if need_state_space and kind != "linear_gaussian":
        diags.append(ConfigError("likelihood-sweep needs a state-space model (kind 'linear_gaussian')",
                                 "model.kind"))
    part = model.get("partition")
    if part is not None:
        if not (isinstance(part, list) and len(part) == 3 and all(isinstance(x, int) and x >= 0 for x in part)):
            diags.append(ConfigError("must be [dim eps1, dim eps2, dim eta] of nonnegative integers",
                                     "model.partition"))
        else:
            obs = model.get("obs_dim", 1)
            if part[1] + part[2] != obs:
                diags.append(ConfigError(
                    f"dim(eps2) + dim(eta) = {part[1] + part[2]} but dim(y) = {obs}; the change of variables "
                    "from (eta, eps2) to y needs dim(eps2) + dim(eta) = dim(y)", "model.partition"))
            elif kind == "linear_gaussian" and part != [1, 0, 1]:
                diags.append(ConfigError("the scalar linear-Gaussian model has partition [1, 0, 1]",
                                         "model.partition"))
    params = {k: v for k, v in model.items() if k not in ("partition", "obs_dim")}
    try:
        model_from_config(params)
    except BadParameter as exc:
        diags.append(ConfigError(str(exc), "model"))
    except TypeError as exc:
        diags.append(ConfigError(f"bad parameter type ({exc})", "model"))


def _validate_scheme(t, name, diags):
    scheme = t.get("scheme")
    if scheme == "perturbation":
        _num(t, "scale", name, diags, lo=0, lo_strict=True)
        _num(t, "power", name, diags, lo=0, lo_strict=True)
        _num(t, "level", name, diags)
    elif scheme == "grid":
        for key in ("radius0", "mesh0"):
            if key not in t:
                diags.append(ConfigError("required for the grid scheme", f"{name}.{key}"))
            else:
                _num(t, key, name, diags, lo=0, lo_strict=True)
        _num(t, "radius_growth", name, diags, lo=0)
        _num(t, "mesh_power", name, diags, lo=0)
        _num(t, "center", name, diags)
        _num(t, "floor", name, diags)
    else:
        diags.append(ConfigError(f"must be 'perturbation' or 'grid', got {scheme!r}", f"{name}.scheme"))


def load_config(path) -> dict:
    """Read a TOML file; raises ``OSError`` or :class:`ConfigError`."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return tomllib.loads(data.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"not valid TOML ({exc})", "<file>") from None


def validate(config_path) -> list[ConfigError]:
    """Diagnostics for a config file; touches nothing on disk."""
    try:
        raw = load_config(config_path)
    except ConfigError as exc:
        return [exc]
    return parse_config(raw, Path(config_path).parent)[1]


def resolve_seed(flag: Optional[int], config_seed: Optional[int], env=None) -> int:
    """Seed precedence: command-line flag, then ``ERGODICA_SEED``, then the config."""
    env = os.environ if env is None else env
    if flag is not None:
        seed = flag
    elif env.get(SEED_ENV, "").strip():
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"not an integer: {env[SEED_ENV]!r}", SEED_ENV) from None
    elif config_seed is not None:
        seed = config_seed
    else:
        raise ConfigError("no seed given (config, environment or --seed)", "seed")
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError("seed must be a 64-bit nonnegative integer", "seed")
    return int(seed)


# ---------------------------------------------------------------- builders

def build_transition(model: dict):
    from .dynsys import StateSpaceModel, model_from_config

    m = model_from_config({k: v for k, v in model.items() if k not in ("partition", "obs_dim")})
    return m.transition if isinstance(m, StateSpaceModel) else m


def build_family(exact, t: dict):
    from .approx import ApproximationFamily, ControlledPerturbation, GridInterp

    if t["scheme"] == "perturbation":
        sch = ControlledPerturbation(t.get("scale", 1.0), t.get("power", 1.0), t.get("level", 1.0))
    else:
        sch = GridInterp.power_law(t["radius0"], t["mesh0"], t.get("radius_growth", 0.0), t.get("mesh_power", 1.0),
                                   t.get("center", 0.0), t.get("floor"))
    return ApproximationFamily(exact, sch)


def _bank(cfg, dim):
    from .approx import default_bank

    centers = cfg.metric["bank_centers"]
    return default_bank(dim, None if centers is None else np.asarray(centers, float), tuple(cfg.metric["bank_slopes"]))


def _compacts(cfg, kernel):
    from .approx import ExhaustingCompacts

    try:
        return ExhaustingCompacts.from_kernel(cfg.metric["radii"], kernel, cfg.metric["center"])
    except BadParameter as exc:
        raise ConfigError(str(exc), "metric.radii") from None


def _start(phi):
    return np.zeros(phi.dim) if phi.stationary is None else np.full(phi.dim, phi.stationary.location())


# ---------------------------------------------------------------- experiments

def _invariant_sweep(cfg, stream):
    from .measure import SWEEP_COLUMNS, invariant_convergence_sweep

    phi = build_transition(cfg.model)
    fam = build_family(phi, cfg.approximation)
    p = cfg.particles
    rows = invariant_convergence_sweep(
        fam, phi.kernel, cfg.j, p["n"], stream, s0=_start(phi), burn_in=p["burn_in"], bank=_bank(cfg, phi.dim),
        compacts=_compacts(cfg, phi.kernel), mc_n=cfg.metric["mc_n"], grid_points=cfg.metric["grid_points"],
        epsilon=cfg.bound["epsilon"], L=cfg.bound["lipschitz"], mode=p["mode"], threads=cfg.threads)
    return {"invariant_sweep.csv": (SWEEP_COLUMNS, rows)}, rows


def _test_function(name, clip=50.0):
    if name == "tanh":
        return lambda s: np.tanh(s[:, 0])
    return lambda s: np.clip(s[:, 0], -clip, clip)


def _rate_fit(cfg, stream):
    from .measure import fit_geometric_rate

    phi = build_transition(cfg.model)
    lo, hi, n = cfg.rate["grid"]
    grid = np.linspace(lo, hi, n)
    fit = fit_geometric_rate(phi, phi.kernel, _test_function(cfg.rate["f"]), grid, cfg.rate["n_max"],
                             cfg.rate["mc_n"], stream, noise_factor=cfg.rate["noise_factor"])
    used = range(fit.n_range[0], fit.n_range[1] + 1)
    rows = [{"n": k + 1, "error": float(fit.errors[k]), "noise": float(fit.noise[k]),
             "fitted": fit.C * fit.rate ** (k + 1), "in_fit": (k + 1) in used} for k in range(len(fit.errors))]
    summary = {"C": fit.C, "epsilon": fit.epsilon, "rate": fit.rate, "r_squared": fit.r_squared,
               "n_range": list(fit.n_range), "limit": fit.limit}
    return {"rate_fit.csv": (("n", "error", "noise", "fitted", "in_fit"), rows)}, [summary]


def _bound_check(cfg, stream):
    from .approx import metric_transport, realize
    from .measure import check_error_bound, estimate_invariant, fit_geometric_rate
    from .parallel import parallel_map

    phi = build_transition(cfg.model)
    fam = build_family(phi, cfg.approximation)
    p, L = cfg.particles, cfg.bound["lipschitz"]
    f = _test_function("identity", cfg.bound["clip"])
    eps, source = cfg.bound["epsilon"], "user"
    if eps is None:
        lo, hi, n = cfg.rate["grid"]
        fit = fit_geometric_rate(phi, phi.kernel, f, np.linspace(lo, hi, n), cfg.rate["n_max"], cfg.rate["mc_n"],
                                 stream.substream("rate"), noise_factor=cfg.rate["noise_factor"])
        eps, source = fit.contraction_epsilon, "fitted"
    inv = stream.substream("invariant")
    s0 = _start(phi)
    mu = estimate_invariant(phi, phi.kernel, s0, p["burn_in"], p["n"], p["thinning"], inv, p["mode"], tol=None)
    compacts = _compacts(cfg, phi.kernel)

    def point(j):
        phi_j = realize(fam, j)
        mu_j = estimate_invariant(phi_j, phi.kernel, s0, p["burn_in"], p["n"], p["thinning"], inv, p["mode"],
                                  tol=None)
        d = metric_transport(phi_j, phi, phi.kernel, compacts, cfg.metric["mc_n"], stream.substream("metric"),
                             cfg.metric["grid_points"])
        rep = check_error_bound(f, L, mu, mu_j, d.value, eps, source)
        return {"j": j, "lhs": rep.lhs, "rhs": rep.rhs, "slack": rep.slack, "satisfied": rep.satisfied,
                "d_value": d.value, "epsilon": eps, "epsilon_source": source}

    rows = parallel_map(point, cfg.j, cfg.threads)
    cols = ("j", "lhs", "rhs", "slack", "satisfied", "d_value", "epsilon", "epsilon_source")
    return {"bound_check.csv": (cols, rows)}, rows


def _operator_convergence(cfg, stream):
    from .approx import operator_strong_convergence

    phi = build_transition(cfg.model)
    fam = build_family(phi, cfg.approximation)
    compacts = _compacts(cfg, phi.kernel)
    res = operator_strong_convergence(fam, phi.kernel, _bank(cfg, phi.dim), compacts, cfg.j, cfg.metric["mc_n"],
                                      stream, cfg.metric["grid_points"])
    rows = [{"j": r["j"], "metric": "operator", "estimate": r["value"], "std_err": r["std_err"],
             "tail_bound": compacts.tail_mass[-1], "grid_points": r["grid_points"], "mc_n": r["mc_n"]}
            for r in res]
    return {"operator_convergence.csv": (METRIC_COLUMNS, rows)}, rows


def _likelihood_sweep(cfg, stream, out_dir):
    """One sweep per data set; data set ``k`` is simulated from substream ``("data", k)``."""
    from .dynsys import model_from_config, simulate_observations
    from .likelihood import LIKELIHOOD_COLUMNS, ObservationSeries, kalman_loglik, likelihood_convergence_sweep

    model = model_from_config({k: v for k, v in cfg.model.items() if k not in ("partition", "obs_dim")})
    lk = cfg.likelihood
    files = {}
    if lk["data"] is not None:
        path = Path(lk["data"])
        series = [ObservationSeries.from_csv(path if path.is_absolute() else cfg.base_dir / path)]
    else:
        root = stream if lk["data_seed"] is None else type(stream)(lk["data_seed"])
        series = []
        for k in range(lk["datasets"]):
            sim = simulate_observations(model, _start(model.transition), lk["T"], root.substream("data", k))
            series.append(ObservationSeries(sim["y"]))
            files[f"observations_{k}.csv"] = series[-1]
    phi_fam = build_family(model.transition, cfg.approximation) if cfg.approximation else None
    g_fam = build_family(model.measurement, cfg.measurement_approximation) if cfg.measurement_approximation else None
    rows, refs = [], []
    for k, y in enumerate(series):
        ref = kalman_loglik(model, y)
        part = likelihood_convergence_sweep(
            model, phi_fam, g_fam, y, None, cfg.j, cfg.particles["n"], stream.substream("sweep", k),
            invariant_particles=lk["invariant_particles"], burn_in=cfg.particles["burn_in"], batches=lk["batches"],
            compacts=_compacts(cfg, model.shock_kernel), mc_n=cfg.metric["mc_n"],
            grid_points=cfg.metric["grid_points"], reference=ref, threads=cfg.threads)
        rows += [{"dataset": k, **r} for r in part]
        refs.append({"dataset": k, "T": y.T, **json.loads(ref.to_json())})
    files["likelihood_sweep.csv"] = (("dataset",) + LIKELIHOOD_COLUMNS + ("oracle_loglik",), rows)
    files["likelihood_reference.json"] = json.dumps(refs, indent=2, sort_keys=True) + "\n"
    return files, rows


METRIC_COLUMNS = ("j", "metric", "estimate", "std_err", "tail_bound", "grid_points", "mc_n")


# ---------------------------------------------------------------- output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    lines += [",".join(_fmt(r[c]) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"


def atomic_write(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


@dataclass
class RunReport:
    experiment: str
    seed: int
    threads: int
    version: str
    config: dict
    results: list
    files: list
    wall_time_s: float

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.__dict__), indent=2, sort_keys=True) + "\n"


def run(config_path, out: Optional[str] = None, seed: Optional[int] = None, threads: Optional[int] = None,
        env=None) -> RunReport:
    """Run the experiment a config describes and write its files under the output directory."""
    from .rng import RandomStream

    raw = load_config(config_path)
    cfg, diags = parse_config(raw, Path(config_path).parent)
    if diags:
        raise diags[0]
    if threads is not None:
        if threads < 1:
            raise ConfigError("must be >= 1", "threads")
        cfg.threads = threads
    root_seed = resolve_seed(seed, cfg.seed, env)
    out_dir = Path(out if out is not None else cfg.out)
    if not out_dir.is_absolute() and out is None:
        out_dir = cfg.base_dir / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = RandomStream(root_seed).substream(cfg.experiment)
    t0 = time.perf_counter()
    try:
        if cfg.experiment == "invariant-sweep":
            files, results = _invariant_sweep(cfg, stream)
        elif cfg.experiment == "rate-fit":
            files, results = _rate_fit(cfg, stream)
        elif cfg.experiment == "bound-check":
            files, results = _bound_check(cfg, stream)
        elif cfg.experiment == "operator-convergence":
            files, results = _operator_convergence(cfg, stream)
        else:
            files, results = _likelihood_sweep(cfg, stream, out_dir)
    except ConfigError:
        raise
    except ErgodicaError as exc:
        exc.args = (f"{cfg.experiment}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
        raise
    wall = time.perf_counter() - t0
    written = []
    for name, payload in files.items():
        if isinstance(payload, tuple):
            text = csv_text(*payload)
        elif isinstance(payload, str):
            text = payload
        else:
            import io

            buf = io.StringIO()
            payload.to_csv(buf)
            text = buf.getvalue()
        atomic_write(out_dir / name, text)
        written.append(name)
    report = RunReport(cfg.experiment, root_seed, cfg.threads, __version__, raw, results, sorted(written), wall)
    atomic_write(out_dir / "run_report.json", report.to_json())
    return report
