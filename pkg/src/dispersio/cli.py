"""Command line interface: ``dispersio <command> [options]``.

Commands
--------
pdc         check a friction kernel for power dissipation
build       realise a spectral density by hidden modes
simulate    run a system file with a forcing file
demo        oscillator, lorentz or scalar worked examples
roundtrip   kernel -> extension -> kernel consistency check
invert      boundary density of a kernel transform

Options can also come from an INI file given with ``--config``; keys are the
long option names (``t-end`` or ``t_end``) in a section named after the
command (``[demo]`` also accepts ``[demo.<model>]``). Flags on the command
line override the file. Exit codes: 0 success, 1 failed check or
computation, 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import io as dio
from .dynamics import (
    ForcingSignal,
    SimulationError,
    decay_report,
    energy_ledger,
    simulate_direct,
    simulate_extended,
)
from .extension import (
    BlockSystem,
    SpectralBlockSystem,
    assemble_block,
    build_from_density,
    reconstruct_kernel_freq,
    reduced_representation,
)
from .models import (
    MaxwellModeParams,
    OscillatorParams,
    damped_oscillator_extension,
    lorentz_mode_system,
    lorentz_scalar_resonances,
    lorentz_scalar_system,
    maxwell_extended_mode,
    polarization_series,
    scalar_system_extension,
    synthetic_density,
)
from .pdc import check_freq_pdc, check_time_pdc, upper_half_plane_probes
from .spectra import (
    DispersiveSystem,
    FrictionKernel,
    HerglotzEvaluator,
    LorentzParams,
    SpectralDensity,
    SpectralGrid,
    kernel_transform,
    lorentz_density,
    lorentz_friction_transform,
    lorentz_kernel,
    lorentz_susceptibility,
    stieltjes_invert,
)

__all__ = ["RunConfig", "UsageError", "parse_config", "run", "main"]


class UsageError(Exception):
    """Bad command line or configuration (exit code 2)."""


@dataclass
class RunConfig:
    command: str
    params: dict
    out: Path
    seed: int = 0
    plots: bool = True
    model: Optional[str] = None
    config_file: Optional[Path] = None
    inputs: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _floats(text: str):
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _complexes(text: str):
    return [complex(x.replace(" ", "")) for x in str(text).split(",") if x.strip()]


# (name, type, default, help); None default means optional
_COMMON = [
    ("out", str, "out", "output directory"),
    ("seed", int, 0, "seed for randomised probes"),
]

_SPEC = {
    "pdc": [
        ("kernel", str, None, "kernel CSV (t, re a11, im a11, ...)"),
        ("model", str, None, "built-in kernel instead of a file: lorentz or broken"),
        ("wp", float, 1.0, "Lorentz plasma frequency"),
        ("w0", float, 1.0, "Lorentz resonance frequency"),
        ("gamma", float, 0.5, "Lorentz damping"),
        ("n-times", int, 200, "number of random probe times"),
        ("t-max", float, 20.0, "probe times are drawn from [0, t-max]"),
        ("trials", int, 0, "extra random-subset Gram checks"),
        ("probes", int, 0, "number of upper half plane probes for the frequency test"),
        ("tol", float, 1e-8, "pass threshold on the normalised smallest eigenvalue"),
    ],
    "build": [
        ("density", str, None, "density CSV (sigma, dsigma, re n11, im n11, ...)"),
        ("alpha-inf", str, None, "matrix CSV with the instantaneous coefficient"),
        ("tail-R", float, None, "half-width of the flat tail for alpha-inf"),
        ("tail-nodes", int, None, "number of flat tail cells"),
        ("eps-rank", float, 1e-10, "relative rank threshold per node"),
        ("mass", str, None, "matrix CSV with m (identity by default)"),
        ("generator", str, None, "matrix CSV with A (zero by default)"),
        ("m1", float, 1.0, "hidden mass scale"),
    ],
    "simulate": [
        ("system", str, None, "system JSON"),
        ("forcing", str, None, "forcing CSV (t, re f1, im f1, ...)"),
        ("pulse", str, None, "impulse strength at t=0, comma separated complex numbers"),
        ("v0", str, None, "initial velocity override, comma separated complex numbers"),
        ("dt", float, None, "time step"),
        ("t-end", float, None, "final time"),
        ("method", str, "eigen", "eigen, trapezoid or direct"),
        ("dump-hidden", bool, False, "write hidden states"),
        ("hidden-stride", int, 1, "record every n-th hidden state"),
        ("memory-cap-mb", float, 512.0, "cap on recorded hidden states"),
    ],
    "demo.oscillator": [
        ("m", float, 1.0, "mass"),
        ("Omega", float, 1.0, "frequency"),
        ("gamma", float, 0.2, "damping"),
        ("R", float, 100.0, "flat tail half-width"),
        ("K", int, 4001, "flat tail cells"),
        ("dt", float, 0.01, "time step"),
        ("t-end", float, 25.0, "end of the fidelity window"),
        ("decay-time", float, None, "decay check horizon (default 25 m / gamma)"),
        ("decay-fraction", float, 0.01, "decay threshold relative to the peak"),
        ("fidelity-tol", float, 2e-2, "allowed max deviation from exp(-gamma t / m)"),
        ("method", str, "eigen", "eigen or trapezoid"),
    ],
    "demo.lorentz": [
        ("wp", float, 1.0, "plasma frequency"),
        ("w0", float, 1.0, "resonance frequency"),
        ("gamma", float, 0.5, "damping"),
        ("k", float, 0.7, "wavenumber"),
        ("R", float, 1000.0, "grid half-width"),
        ("spacing", float, 0.01, "cell width near the resonances"),
        ("growth", float, 1.04, "cell growth away from the resonances"),
        ("dt", float, 0.01, "time step"),
        ("t-end", float, 300.0, "final time"),
        ("carrier", float, 1.0, "pulse carrier frequency"),
        ("width", float, 6.0, "pulse width"),
        ("center", float, 30.0, "pulse centre"),
        ("band", str, "0.5,1.5", "frequency band for the susceptibility check"),
        ("response-tol", float, 2e-2, "allowed relative error of |P/E|"),
    ],
    "demo.scalar": [
        ("wp", float, 1.0, "plasma frequency"),
        ("w0", float, 1.0, "resonance frequency"),
        ("gamma", float, 0.5, "damping"),
        ("m", float, 1.0, "mass"),
        ("A", float, 3.0, "generator"),
        ("R", float, 40.0, "grid half-width"),
        ("spacing", float, 2e-4, "cell width at the resonances"),
        ("halfwidth", float, 0.05, "refined region around each resonance"),
        ("growth", float, 1.02, "cell growth away from the resonances"),
        ("dt", float, 1e-3, "time step"),
        ("t-end", float, 40.0, "final time"),
        ("center", float, 5.0, "pulse centre"),
        ("width", float, 1.0, "pulse width"),
        ("match-tol", float, 1e-2, "allowed relative difference of the two simulators"),
    ],
    "roundtrip": [
        ("model", str, "lorentz", "lorentz or synthetic"),
        ("wp", float, 1.0, "plasma frequency"),
        ("w0", float, 1.0, "resonance frequency"),
        ("gamma", float, 0.5, "damping"),
        ("n", int, 4000, "grid cells"),
        ("R", float, 20.0, "grid half-width"),
        ("probes", int, 100, "number of probe points"),
        ("tol", float, 1e-3, "allowed relative round-trip error"),
    ],
    "invert": [
        ("kernel", str, None, "kernel CSV (default: Lorentz closed form)"),
        ("wp", float, 1.0, "plasma frequency"),
        ("w0", float, 1.0, "resonance frequency"),
        ("gamma", float, 0.5, "damping"),
        ("lo", float, 0.1, "grid start"),
        ("hi", float, 3.0, "grid end"),
        ("n", int, 500, "grid cells"),
        ("etas", str, "1e-3,5e-4", "decreasing offsets"),
        ("tol", float, 1e-2, "allowed relative error against the closed form"),
    ],
}

_REQUIRED = {"simulate": ["system", "dt", "t-end"], "build": ["density"]}


def _dest(name: str) -> str:
    return name.replace("-", "_")


def _add_options(p, spec):
    for name, typ, default, helptext in spec:
        if typ is bool:
            p.add_argument(f"--{name}", dest=_dest(name), action="store_true", default=None, help=helptext)
        else:
            p.add_argument(f"--{name}", dest=_dest(name), type=typ, default=None,
                           help=f"{helptext} (default: {default})")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dispersio", description="Dissipative systems and their conservative extensions.")
    parser.add_argument("--version", action="version", version=f"dispersio {__version__}")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", default=None, help="INI file with option values")
        p.add_argument("--no-plots", dest="no_plots", action="store_true", help="skip PNG figures")
        _add_options(p, _COMMON)

    helps = {"pdc": "check a kernel for power dissipation",
             "build": "realise a spectral density by hidden modes",
             "simulate": "run a system file with a forcing file",
             "roundtrip": "kernel -> extension -> kernel consistency check",
             "invert": "boundary density of a kernel transform"}
    for cmd, text in helps.items():
        p = sub.add_parser(cmd, help=text)
        common(p)
        _add_options(p, _SPEC[cmd])
    demo = sub.add_parser("demo", help="worked examples")
    dsub = demo.add_subparsers(dest="model")
    for model in ("oscillator", "lorentz", "scalar"):
        p = dsub.add_parser(model)
        common(p)
        _add_options(p, _SPEC[f"demo.{model}"])
    return parser


def _read_config(path: Path, section_names, spec) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    known = {_dest(n): (n, t) for n, t, _, _ in spec + _COMMON}
    known["no_plots"] = ("no-plots", bool)
    values = {}
    for sec in cp.sections():
        if sec not in section_names:
            continue
        for key, raw in cp.items(sec):
            dest = _dest(key.strip())
            if dest not in known:
                raise UsageError(f"unknown key '{key}' in section [{sec}] of {path}")
            name, typ = known[dest]
            try:
                if typ is bool:
                    values[dest] = cp.getboolean(sec, key)
                else:
                    values[dest] = typ(raw.strip())
            except ValueError as exc:
                raise UsageError(f"bad value for '{key}' in {path}: {raw!r}") from exc
    return values


def parse_config(argv) -> RunConfig:
    """Parse the command line (and optional INI file) into a :class:`RunConfig`."""
    parser = _build_parser()
    argv = list(argv)
    if not argv:
        raise UsageError(parser.format_usage().strip() + "\nerror: a command is required")
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code == 0:
            raise
        raise UsageError("invalid arguments (see --help)") from exc
    if ns.command is None:
        raise UsageError(parser.format_usage().strip() + "\nerror: a command is required")
    model = getattr(ns, "model", None) if ns.command == "demo" else None
    if ns.command == "demo" and model is None:
        raise UsageError("demo needs a model: oscillator, lorentz or scalar")
    key = f"demo.{model}" if ns.command == "demo" else ns.command
    spec = _SPEC[key]
    values = {}
    cfg_path = Path(ns.config) if ns.config else None
    if cfg_path is not None:
        sections = {ns.command, key} | ({"demo"} if ns.command == "demo" else set())
        values.update(_read_config(cfg_path, sections, spec))
    cli = {k: v for k, v in vars(ns).items() if v is not None and k not in ("command", "config")}
    if ns.command == "demo":
        cli.pop("model", None)
    if not cli.get("no_plots"):
        cli.pop("no_plots", None)
    values.update(cli)

    params = {}
    for name, _, default, _ in spec:
        params[_dest(name)] = values.get(_dest(name), default)
    for name in _REQUIRED.get(ns.command, []):
        if params.get(_dest(name)) is None:
            raise UsageError(f"missing required option --{name} for '{ns.command}'")
    for k, v in params.items():
        if v is None:
            continue
        if ("tol" in k or k in ("dt", "fraction", "decay_fraction")) and isinstance(v, (int, float)) and not v > 0:
            raise UsageError(f"--{k.replace('_', '-')} must be positive (got {v})")
        if k in ("dt", "t_end", "R", "n", "K", "n_times", "t_max") and isinstance(v, (int, float)) and v < 0:
            raise UsageError(f"--{k.replace('_', '-')} must be nonnegative (got {v})")
    if ns.command == "pdc" and params["kernel"] is None and params["model"] is None:
        raise UsageError("pdc needs --kernel FILE or --model lorentz|broken")
    return RunConfig(ns.command, params, Path(values.get("out", "out")), int(values.get("seed", 0)),
                     not values.get("no_plots", False), model, cfg_path)


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------

class _Outputs:
    """Tracks written files so a failed run can remove them."""

    def __init__(self, root: Path):
        self.root = root
        self.files = []

    def path(self, name: str) -> Path:
        p = self.root / name
        self.files.append(p)
        return p

    def cleanup(self):
        for p in self.files:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def _versions() -> dict:
    import scipy
    return {"dispersio": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _clean(x):
    """Round-trip floats through repr so the JSON is stable."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, Path):
        return str(x)
    return x


def _summary(cfg: RunConfig, outs: _Outputs, metrics: dict, checks: dict, extra=None) -> dict:
    inputs = {}
    for key in ("kernel", "density", "alpha_inf", "mass", "generator", "system", "forcing"):
        val = cfg.params.get(key)
        if val and key != "model" and Path(str(val)).is_file():
            inputs[str(val)] = dio.file_digest(val)
    if cfg.config_file is not None:
        inputs[str(cfg.config_file)] = dio.file_digest(cfg.config_file)
    out = {
        "command": cfg.command if cfg.model is None else f"{cfg.command} {cfg.model}",
        "config": cfg.params,
        "seed": cfg.seed,
        "inputs": inputs,
        "versions": _versions(),
        "metrics": metrics,
        "checks": checks,
        "pass": bool(all(checks.values())) if checks else True,
        "outputs": sorted(p.name for p in outs.files if p.name != "summary.json"),
    }
    if extra:
        out.update(extra)
    return _clean(out)


def run(cfg: RunConfig) -> int:
    """Execute a parsed configuration; returns the exit code."""
    root = cfg.out
    if cfg.command == "build" and cfg.out.suffix == ".csv":
        # ``--out ext.csv`` names the extension file; the rest goes beside it
        root = cfg.out.parent
    root.mkdir(parents=True, exist_ok=True)
    outs = _Outputs(root)
    handler = {"pdc": _run_pdc, "build": _run_build, "simulate": _run_simulate,
               "roundtrip": _run_roundtrip, "invert": _run_invert}.get(cfg.command)
    if cfg.command == "demo":
        handler = {"oscillator": _demo_oscillator, "lorentz": _demo_lorentz,
                   "scalar": _demo_scalar}[cfg.model]
    try:
        metrics, checks, extra = handler(cfg, outs)
        summary = _summary(cfg, outs, metrics, checks, extra)
        dio.dump_json(outs.path("summary.json"), summary)
    except UsageError:
        outs.cleanup()
        raise
    except (ValueError, SimulationError, MemoryError, np.linalg.LinAlgError, OSError) as exc:
        outs.cleanup()
        print(f"dispersio {cfg.command}: error: {exc}", file=sys.stderr)
        return 1
    status = "pass" if summary["pass"] else "FAIL"
    print(f"dispersio {summary['command']}: {status} -> {root / 'summary.json'}")
    return 0 if summary["pass"] else 1


def _lorentz(params) -> LorentzParams:
    return LorentzParams(params["wp"], params["w0"], params["gamma"])


# pdc ---------------------------------------------------------------------

def _broken_kernel() -> FrictionKernel:
    return FrictionKernel.from_function(lambda t: -np.exp(-np.asarray(t))[:, None, None],
                                        np.zeros((1, 1)), alpha_sup=1.0, decay_rate=1.0,
                                        transform=lambda z: np.array([[-1j / (z + 1j)]]))


def _run_pdc(cfg, outs):
    p = cfg.params
    if p["kernel"]:
        kern = dio.read_kernel(p["kernel"])
    elif p["model"] == "lorentz":
        kern = lorentz_kernel(_lorentz(p))
    elif p["model"] == "broken":
        kern = _broken_kernel()
    else:
        raise UsageError(f"unknown pdc model {p['model']!r}")
    rng = np.random.default_rng(cfg.seed)
    t_max = p["t_max"]
    if kern.is_sampled:
        t_max = min(t_max, kern.horizon)
    times = np.sort(rng.uniform(0.0, t_max, p["n_times"]))
    times = np.unique(times)
    rep = check_time_pdc(kern, times, trials=p["trials"], seed=cfg.seed, tol=p["tol"])
    reports = {"time": rep.to_dict()}
    checks = {"time_pdc": rep.passed}
    if p["probes"] > 0:
        zs = upper_half_plane_probes(p["probes"], seed=cfg.seed)
        frep = check_freq_pdc(kernel_transform(kern), zs, tol=p["tol"])
        reports["freq"] = frep.to_dict()
        checks["freq_pdc"] = frep.passed
    # the worst location is a list of probe times; keep the report compact
    reports["time"]["worst_location_size"] = len(reports["time"].pop("worst_location"))
    dio.dump_json(outs.path("pdc_report.json"), _clean(reports))
    metrics = {"time_worst": rep.worst_value, "n_times": int(times.size)}
    if "freq" in reports:
        metrics["freq_worst"] = reports["freq"]["worst_value"]
    return metrics, checks, None


# build -------------------------------------------------------------------

def _run_build(cfg, outs):
    p = cfg.params
    dens = dio.read_density(p["density"])
    d = dens.dim
    ainf = dio.read_matrix(p["alpha_inf"]) if p["alpha_inf"] else None
    ext = build_from_density(dens, ainf, p["tail_R"], p["tail_nodes"], p["eps_rank"])
    m = dio.read_matrix(p["mass"]) if p["mass"] else np.eye(d)
    A = dio.read_matrix(p["generator"]) if p["generator"] else np.zeros((d, d))
    blk = assemble_block(m, A, ext, p["m1"])
    ext_name = cfg.out.name if cfg.out.suffix == ".csv" else "extension.csv"
    dio.write_extension(outs.path(ext_name), ext)
    dio.write_system(outs.path("system.json"), blk, extension_file=ext_name)
    red = reduced_representation(ext)
    metrics = {"d": d, "hidden_dim": ext.hidden_dim, "reduced_dim": red.rank,
               "node_ranks_max": int(np.max(ext.node_ranks(len(dens)))) if len(dens) else 0}
    if ext.flat_tail is not None:
        metrics["flat_tail_error_constant"] = ext.flat_tail.error_constant
    return metrics, {}, None


# simulate ----------------------------------------------------------------

def _run_simulate(cfg, outs):
    p = cfg.params
    system = dio.read_system(p["system"])
    d = system.dim if isinstance(system, DispersiveSystem) else system.d
    forcing = dio.read_forcing(p["forcing"]) if p["forcing"] else None
    if p["pulse"]:
        F0 = np.array(_complexes(p["pulse"]))
        if forcing is not None:
            forcing = ForcingSignal(forcing.dim, 0.0, forcing.t_off, times=forcing.times,
                                    values=forcing.values, impulse=F0)
        else:
            forcing = ForcingSignal.pulse(F0)
    if forcing is not None and forcing.dim != d:
        raise ValueError(f"forcing has dimension {forcing.dim}, system has {d}")
    v0 = np.array(_complexes(p["v0"])) if p["v0"] else None
    if isinstance(system, DispersiveSystem):
        if p["method"] not in ("direct", "eigen"):
            raise UsageError("dispersive systems are simulated with --method direct")
        traj = simulate_direct(system, forcing, p["t_end"], p["dt"], v0=v0)
    else:
        if p["method"] == "direct":
            raise UsageError("block systems use --method eigen or trapezoid")
        traj = simulate_extended(system, forcing, p["t_end"], p["dt"], method=p["method"], v0=v0,
                                 record_hidden=bool(p["dump_hidden"]), hidden_stride=p["hidden_stride"],
                                 memory_cap=int(p["memory_cap_mb"] * 2 ** 20))
    led = energy_ledger(traj, system)
    dio.write_trajectory(outs.path("trajectory.csv"), traj)
    if p["dump_hidden"] and traj.w is not None:
        dio.write_hidden(outs.path("hidden.csv"), traj)
    if cfg.plots:
        from .plotting import plot_ledger, plot_speed
        plot_speed(outs.path("speed.png"), traj, title="|v(t)|")
        plot_ledger(outs.path("ledger.png"), traj, led, title="energy ledger")
    peak = float(np.max(led.energy)) if led.energy.size else 0.0
    metrics = {"steps": int(traj.t.size - 1), "method": traj.method,
               "max_speed": float(traj.speed().max()),
               "final_energy": float(traj.energy[-1]),
               "max_balance_residual": float(np.max(np.abs(led.residual))),
               "max_friction_work": float(np.max(traj.work_fric)),
               "peak_energy": peak, "v0_override": traj.meta.get("v0_override", False)}
    return metrics, {}, None


# demos -------------------------------------------------------------------

def _demo_oscillator(cfg, outs):
    p = cfg.params
    op = OscillatorParams(p["m"], p["Omega"], p["gamma"])
    blk = damped_oscillator_extension(op, p["R"], p["K"])
    decay_t = p["decay_time"] if p["decay_time"] is not None else (
        25.0 * op.m_o / op.gamma_o if op.gamma_o > 0 else 4 * p["t_end"])
    t_end = max(p["t_end"], decay_t)
    t_end = p["dt"] * round(t_end / p["dt"])
    traj = simulate_extended(blk, None, t_end, p["dt"], method=p["method"], v0=[1.0])
    exact = np.exp(-(1j * op.Omega_o + op.gamma_o / op.m_o) * traj.t)
    win = traj.t <= p["t_end"] + 1e-12
    fid = float(np.max(np.abs(np.abs(traj.v[win, 0]) - np.abs(exact[win]))))
    rep = decay_report(traj, 0.5 * decay_t, fraction=p["decay_fraction"])
    drift = float(np.ptp(traj.energy) / traj.energy[0])
    dsig = 2 * p["R"] / p["K"] if p["K"] else np.inf
    dio.write_extension(outs.path("extension.csv"), blk.ext)
    dio.write_system(outs.path("system.json"), blk, extension_file="extension.csv")
    dio.write_trajectory(outs.path("trajectory.csv"), traj)
    if cfg.plots:
        from .plotting import plot_speed
        plot_speed(outs.path("speed.png"), traj, (traj.t, exact), label="|T V(t)|",
                   ref_label="exp(-gamma t / m)", log=True, title="damped oscillator extension")
    metrics = {"fidelity_max_error": fid, "decay": rep.to_dict(), "energy_drift": drift,
               "hidden_dim": blk.ext.hidden_dim, "recurrence_time": 2 * np.pi / dsig if dsig > 0 else None}
    checks = {"fidelity": fid <= p["fidelity_tol"], "decay": rep.passed,
              "energy": drift <= 1e-10}
    return metrics, checks, None


def _demo_lorentz(cfg, outs):
    p = cfg.params
    lp = _lorentz(p)
    mp = MaxwellModeParams(p["k"], lp, p["R"], p["spacing"], p["growth"])
    blk = maxwell_extended_mode(mp)
    mode = lorentz_mode_system(mp)
    force = ForcingSignal.gaussian([1.0, 0.0], p["center"], p["width"], carrier=p["carrier"])
    traj = simulate_extended(blk, force, p["t_end"], p["dt"])
    pol = polarization_series(traj)
    band = _floats(p["band"])
    if len(band) != 2 or not band[1] > band[0]:
        raise UsageError("--band needs two increasing numbers")
    omega = np.linspace(band[0], band[1], 41)
    wts = np.full(traj.t.size, traj.dt)
    wts[0] = wts[-1] = 0.5 * traj.dt
    phase = np.exp(1j * np.outer(omega, traj.t))
    ratio = (phase @ (wts * pol.P)) / (phase @ (wts * pol.E))
    chi = lorentz_susceptibility(lp, omega)
    resp_err = float(np.max(np.abs(np.abs(ratio) - np.abs(chi)) / np.abs(chi)))
    after = traj.t >= force.t_off
    drift = float(np.ptp(traj.energy[after]) / traj.energy[after][0]) if np.any(after) else 0.0
    zs = upper_half_plane_probes(20, seed=cfg.seed)
    bnull = max(float(np.abs(reconstruct_kernel_freq(blk.ext, z)[:, 1]).max()) for z in zs)
    ahat_err = max(float(np.abs(reconstruct_kernel_freq(blk.ext, z)[0, 0] - lorentz_friction_transform(lp, z))
                         / np.abs(lorentz_friction_transform(lp, z))) for z in zs)
    expected = 4 * np.pi * lp.omega_p ** 2
    mass_err = abs(blk.info["density_mass"] - expected) / expected if expected > 0 else 0.0
    dio.write_extension(outs.path("extension.csv"), blk.ext)
    dio.write_system(outs.path("system.json"), blk, extension_file="extension.csv")
    dio.write_trajectory(outs.path("trajectory.csv"), traj)
    if cfg.plots:
        from .plotting import plot_response, plot_speed
        plot_response(outs.path("response.png"), omega, ratio, chi, title="|P/E| against |chi|")
        plot_speed(outs.path("speed.png"), traj, title="|(E, B)(t)|")
    metrics = {"response_max_rel_error": resp_err, "energy_drift_after_pulse": drift,
               "density_mass": blk.info["density_mass"], "density_mass_rel_error": mass_err,
               "kernel_B_column_max": bnull, "kernel_E_max_rel_error": ahat_err,
               "hidden_dim": blk.ext.hidden_dim, "A_eigenvalues": np.linalg.eigvalsh(mode.A)}
    checks = {"response": resp_err <= p["response_tol"], "mass": mass_err <= 1e-2,
              "B_null": bnull == 0.0, "energy": drift <= 1e-10}
    return metrics, checks, None


def _demo_scalar(cfg, outs):
    p = cfg.params
    lp = _lorentz(p)
    sysd = lorentz_scalar_system(lp, p["m"], p["A"])
    from .dynamics import admittance_from_triplet
    adm = admittance_from_triplet(sysd)
    poles = lorentz_scalar_resonances(lp, p["m"], p["A"])
    width = float(np.min(np.abs(poles.imag)))
    spacing = p["spacing"]
    grid = SpectralGrid.graded(p["R"], poles.real, p["halfwidth"], spacing, p["growth"])
    etas = (3 * spacing, 1.5 * spacing)
    sb = scalar_system_extension(adm, grid, etas)
    force = ForcingSignal.gaussian([1.0], p["center"], p["width"])
    td = simulate_direct(sysd, force, p["t_end"], p["dt"])
    tx = simulate_extended(sb, force, p["t_end"], p["dt"])
    diff = float(np.max(np.abs(td.v - tx.v)) / np.max(np.abs(td.v)))
    peak = float(np.max(td.energy))
    wfr = float(np.max(td.work_fric))
    dio.write_system(outs.path("system.json"), sb)
    dio.write_trajectory(outs.path("trajectory_direct.csv"), td)
    dio.write_trajectory(outs.path("trajectory_extended.csv"), tx)
    if cfg.plots:
        from .plotting import plot_speed
        plot_speed(outs.path("speed.png"), td, (tx.t, tx.v[:, 0]), label="direct",
                   ref_label="extended", title="scalar Lorentz system")
    metrics = {"simulator_rel_difference": diff, "friction_work_max": wfr, "peak_energy": peak,
               "mass": sb.mu, "mass_defect": sb.info["mass_defect"], "modes": sb.size,
               "narrowest_resonance_width": width}
    checks = {"simulators_agree": diff <= p["match_tol"], "friction_work_sign": wfr <= 1e-8 * peak}
    return metrics, checks, None


# roundtrip and invert ----------------------------------------------------

def _roundtrip(dens: SpectralDensity, probes, etas):
    ext = build_from_density(dens)
    h = HerglotzEvaluator(lambda z: reconstruct_kernel_freq(ext, z), dens.dim, "kernel")
    back = stieltjes_invert(h, dens.grid, etas)
    ext2 = build_from_density(back)
    errs = []
    for z in probes:
        a = reconstruct_kernel_freq(ext, z)
        b = reconstruct_kernel_freq(ext2, z)
        errs.append(float(np.linalg.norm(a - b, ord=2) / np.linalg.norm(a, ord=2)))
    return ext, back, ext2, max(errs)


def _run_roundtrip(cfg, outs):
    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    probes = rng.uniform(-4, 4, p["probes"]) + 1j * 10 ** rng.uniform(-0.5, 1.0, p["probes"])
    if p["model"] == "lorentz":
        lp = _lorentz(p)
        grid = SpectralGrid.uniform(-p["R"], p["R"], p["n"])
        dens = SpectralDensity.from_function(grid, lambda s: lorentz_density(lp, s))
    elif p["model"] == "synthetic":
        dens = synthetic_density(cfg.seed)
    else:
        raise UsageError(f"unknown roundtrip model {p['model']!r}")
    step = float(np.max(dens.weights))
    # the rebuilt kernel is a sum of atoms on the nodes, so the offsets must
    # exceed the spacing; three of them cancel the quadratic bias as well
    ext, back, ext2, err = _roundtrip(dens, probes, (2 * step, 3 * step, 4 * step))
    dio.write_density(outs.path("density.csv"), back)
    dio.write_extension(outs.path("extension.csv"), ext2)
    if cfg.plots:
        from .plotting import plot_density
        tr = np.real(np.trace(back.values, axis1=1, axis2=2))
        ref = np.real(np.trace(dens.values, axis1=1, axis2=2))
        plot_density(outs.path("density.png"), back.nodes, tr, ref, title="density trace after round trip")
    ranks_in = dens.ranks()
    ranks_out = back.ranks(1e-6)
    metrics = {"kernel_roundtrip_max_rel_error": err, "hidden_dim": ext.hidden_dim,
               "hidden_dim_roundtrip": ext2.hidden_dim,
               "rank_counts": {int(r): int(np.sum(ranks_in == r)) for r in np.unique(ranks_in)},
               "rank_counts_roundtrip": {int(r): int(np.sum(ranks_out == r)) for r in np.unique(ranks_out)},
               "reduced_dim": reduced_representation(ext).rank}
    checks = {"roundtrip": err <= p["tol"]}
    return metrics, checks, None


def _run_invert(cfg, outs):
    p = cfg.params
    etas = _floats(p["etas"])
    if len(etas) < 1 or any(e <= 0 for e in etas):
        raise UsageError("--etas needs positive numbers")
    grid = SpectralGrid.uniform(p["lo"], p["hi"], p["n"])
    if p["kernel"]:
        h = kernel_transform(dio.read_kernel(p["kernel"]))
        exact = None
    else:
        lp = _lorentz(p)
        h = HerglotzEvaluator(lambda z: np.array([[lorentz_friction_transform(lp, z)]]), 1, "kernel")
        exact = lorentz_density(lp, grid.nodes)
    dens = stieltjes_invert(h, grid, etas)
    dio.write_density(outs.path("density.csv"), dens)
    metrics = {"nodes": len(grid)}
    checks = {}
    if exact is not None:
        got = np.real(dens.values[:, 0, 0])
        err = float(np.max(np.abs(got - exact) / exact))
        metrics["max_rel_error"] = err
        checks["density"] = err <= p["tol"]
    if cfg.plots:
        from .plotting import plot_density
        plot_density(outs.path("density.png"), grid.nodes, np.real(dens.values[:, 0, 0]), exact,
                     title="boundary density")
    return metrics, checks, None


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
        return run(cfg)
    except UsageError as exc:
        print(f"dispersio: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
