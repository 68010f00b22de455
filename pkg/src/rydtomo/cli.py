"""Command-line driver: configuration, dispatch, seeding and result files.

    rydtomo design --preset table-s1 --out results/
    rydtomo tomography --config run.yaml --workers 8 --seed 7

Configuration is YAML with the unit in every physical key.  Results are
CSV tables and JSON documents, each accompanied by a manifest holding
the full configuration, seed and code version; no timestamps are
written, so identical runs give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import __version__
from .control import UnreachableTarget, plan_displacement, run_displacement_sequence
from .dissipation import CHANNEL_NAMES, Decoherence
from .hilbert import DensityMatrix, coherent_state, fidelity
from .propagator import MONTE_CARLO, PropagationError
from .ramsey import CalibrationError, build_phase_table, cached_reference_phase, qnd_probability, qnd_sequence_array
from .system_model import TABLE_S1, TWO_PI, SystemParams, make_params, summary
from .tomography import (
    STOCHASTIC_EXTENT,
    InitialStateSpec,
    TomographySettings,
    WignerGrid,
    prepare_initial_state,
    run_tomography_grid,
    square_grid,
    wigner_of_density,
)

log = logging.getLogger("rydtomo")

SUBCOMMANDS = ("design", "ramsey", "collapse", "displace", "tomography", "figdata")
PRESETS = ("table-s1",)


class ConfigError(ValueError):
    pass


# config key -> (make_params argument, SI factor); vectors are lists
PARAM_KEYS: dict[str, tuple[str, float]] = {
    "kappa_newton_meter_per_radian": ("kappa", 1.0),
    "inertia_kilogram_meter2": ("inertia", 1.0),
    "dipole_oscillator_coulomb_meter": ("d_osc", 1.0),
    "quality_factor": ("Q", 1.0),
    "temperature_kelvin": ("T_osc", 1.0),
    "detuning_2pi_megahertz": ("detuning", TWO_PI * 1e6),
    "dipole_atom_coulomb_meter": ("d_ba", 1.0),
    "atom_mass_kilogram": ("mass", 1.0),
    "impact_position_micrometer": ("r0", 1e-6),
    "velocity_measure_meter_per_second": ("v_measure", 1.0),
    "velocity_drive_meter_per_second": ("v_drive", 1.0),
    "sigma_x_micrometer": ("sigma_x", 1e-6),
    "sigma_y_micrometer": ("sigma_y", 1e-6),
    "sigma_vz_meter_per_second": ("sigma_vz", 1.0),
    "region_length_micrometer": ("L", 1e-6),
    "gamma_bbr_2pi_hertz": ("gamma_bbr", TWO_PI),
    "gamma_deph_2pi_hertz": ("gamma_deph", TWO_PI),
    "gamma_osc_2pi_hertz": ("gamma_osc", TWO_PI),
    "n_max": ("n_max", 1),
}
OPTIONAL_PARAMS = {"gamma_osc_2pi_hertz", "n_max"}
VECTOR_PARAMS = {"impact_position_micrometer", "velocity_measure_meter_per_second", "velocity_drive_meter_per_second"}


def _config_value(si: Any, factor: float) -> Any:
    if isinstance(si, tuple):
        return [float(v) / factor for v in si]
    if isinstance(si, int):
        return si
    return float(si) / factor


def preset_values(name: str) -> dict[str, Any]:
    if name != "table-s1":
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    inverse = {arg: key for key, (arg, _) in PARAM_KEYS.items()}
    return {inverse[k]: _config_value(v, PARAM_KEYS[inverse[k]][1]) for k, v in TABLE_S1.items()}


def _complex(v: Any, what: str) -> complex:
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
        return complex(v[0], v[1])
    raise ConfigError(f"{what} must be a number or a [re, im] pair, got {v!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on.  ``to_dict`` output reloads identically."""

    preset: str | None = "table-s1"
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    workers: int | None = None
    decoherence: Decoherence = Decoherence()
    method: str = "a"
    exact: bool = False
    state: dict[str, Any] = field(default_factory=lambda: {"kind": "superposition", "amplitudes": {1: 1.0, 3: 1.0}})
    grid_size: int = 7
    grid_extent: float = STOCHASTIC_EXTENT
    samples: int = 128
    atoms_displacement: int = 8
    atoms_qnd: int = 43
    drive_rabi_2pi_megahertz: tuple[float, float] = (math.sqrt(2) / 2, -math.sqrt(2) / 2)
    drive_ramp_microsecond: float = 0.0
    n_design: int = 5

    def __post_init__(self) -> None:
        if self.method not in ("a", "b"):
            raise ConfigError("method must be 'a' or 'b'")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for name in ("grid_size", "samples", "atoms_qnd"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.atoms_displacement < 0 or self.n_design < 0 or self.grid_extent < 0:
            raise ConfigError("atoms_displacement, n_design and grid_extent must be >= 0")
        if not (isinstance(self.drive_ramp_microsecond, (int, float)) and self.drive_ramp_microsecond >= 0):
            raise ConfigError("drive_ramp_microsecond must be a number >= 0")
        unknown = set(self.params) - set(PARAM_KEYS)
        if unknown:
            raise ConfigError(f"unknown parameter keys: {sorted(unknown)}")
        self.initial_state()

    # -- derived objects

    def parameter_values(self) -> dict[str, Any]:
        vals = preset_values(self.preset) if self.preset else {}
        vals.update(self.params)
        missing = sorted(set(PARAM_KEYS) - OPTIONAL_PARAMS - set(vals))
        if missing:
            raise ConfigError("missing required parameter keys: " + ", ".join(missing))
        return vals

    def system_params(self) -> SystemParams:
        kw: dict[str, Any] = {}
        for key, v in self.parameter_values().items():
            arg, factor = PARAM_KEYS[key]
            if key in VECTOR_PARAMS:
                if not (isinstance(v, (list, tuple)) and len(v) == 3):
                    raise ConfigError(f"{key} must be a 3-vector")
                kw[arg] = tuple(float(x) * factor for x in v)
            elif key == "n_max":
                if not isinstance(v, int) or isinstance(v, bool):
                    raise ConfigError("n_max must be an integer")
                kw[arg] = v
            else:
                if not isinstance(v, (int, float)) or isinstance(v, bool):
                    raise ConfigError(f"{key} must be a number, got {v!r}")
                kw[arg] = float(v) * factor
        try:
            return make_params(**kw)
        except ValueError as e:
            raise ConfigError(f"parameter set violates a physical invariant: {e}") from e

    def initial_state(self) -> InitialStateSpec:
        s = dict(self.state)
        kind = s.pop("kind", None)
        try:
            if kind == "fock":
                spec = InitialStateSpec.fock(int(s.pop("n")))
            elif kind == "coherent":
                spec = InitialStateSpec.coherent(_complex(s.pop("alpha"), "state.alpha"))
            elif kind == "superposition":
                amps = s.pop("amplitudes")
                spec = InitialStateSpec.superposition({int(n): _complex(a, "amplitude") for n, a in amps.items()})
            elif kind == "thermal":
                spec = InitialStateSpec.thermal(float(s.pop("nbar")))
            else:
                raise ConfigError(f"state.kind must be fock, coherent, superposition or thermal, got {kind!r}")
        except KeyError as e:
            raise ConfigError(f"state of kind {kind!r} needs key {e}") from None
        except (TypeError, AttributeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid state: {e}") from None
        if s:
            raise ConfigError(f"unknown state keys: {sorted(s)}")
        return spec

    @property
    def drive(self) -> complex:
        re, im = self.drive_rabi_2pi_megahertz
        return TWO_PI * 1e6 * complex(re, im)

    @property
    def drive_ramp(self) -> float:
        return self.drive_ramp_microsecond * 1e-6

    def settings(self) -> TomographySettings:
        return TomographySettings(
            self.atoms_displacement, self.atoms_qnd, self.method, self.decoherence, MONTE_CARLO, self.drive_ramp
        )

    # -- serialisation

    def to_dict(self) -> dict[str, Any]:
        d = {
            "preset": self.preset,
            "params": dict(self.params),
            "seed": self.seed,
            "workers": self.workers,
            "decoherence": dataclasses.asdict(self.decoherence),
            "method": self.method,
            "exact": self.exact,
            "state": self.state,
            "grid_size": self.grid_size,
            "grid_extent": self.grid_extent,
            "samples": self.samples,
            "atoms_displacement": self.atoms_displacement,
            "atoms_qnd": self.atoms_qnd,
            "drive_rabi_2pi_megahertz": list(self.drive_rabi_2pi_megahertz),
            "drive_ramp_microsecond": self.drive_ramp_microsecond,
            "n_design": self.n_design,
        }
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunConfig:
        if not isinstance(d, dict) or not d:
            required = ", ".join(sorted(set(PARAM_KEYS) - OPTIONAL_PARAMS))
            raise ConfigError(f"empty configuration; give 'preset: table-s1' or all of: {required}")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kw = dict(d)
        kw.setdefault("preset", None)
        if "params" in kw:
            if not isinstance(kw["params"], dict):
                raise ConfigError("params must be a mapping")
            kw["params"] = {str(k): v for k, v in kw["params"].items()}
        if "decoherence" in kw:
            dec = kw["decoherence"]
            if not isinstance(dec, dict) or set(dec) - set(CHANNEL_NAMES):
                raise ConfigError(f"decoherence must map a subset of {CHANNEL_NAMES} to booleans")
            kw["decoherence"] = Decoherence(**{k: bool(v) for k, v in dec.items()})
        if "drive_rabi_2pi_megahertz" in kw:
            z = _complex(kw["drive_rabi_2pi_megahertz"], "drive_rabi_2pi_megahertz")
            kw["drive_rabi_2pi_megahertz"] = (z.real, z.imag)
        if "state" in kw:
            st = dict(kw["state"])
            if "amplitudes" in st and isinstance(st["amplitudes"], dict):
                st["amplitudes"] = {int(k): v for k, v in st["amplitudes"].items()}
            kw["state"] = st
        try:
            return cls(**kw)
        except TypeError as e:
            raise ConfigError(str(e)) from None


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: YAML parse error{where}: {getattr(e, 'problem', e)}") from None
    cfg = RunConfig.from_dict(data if data is not None else {})
    cfg.system_params()  # re-verify the physical invariants now
    return cfg


# --------------------------------------------------------------------------
# output


class Output:
    """Collects result files and writes the manifest last."""

    def __init__(self, root: Path, subcommand: str, cfg: RunConfig) -> None:
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self.subcommand = subcommand
        self.cfg = cfg
        self.files: dict[str, str] = {}

    def _record(self, name: str) -> None:
        self.files[name] = hashlib.sha256((self.root / name).read_bytes()).hexdigest()

    def csv(self, name: str, header: list[str], rows: list[list[Any]]) -> None:
        with open(self.root / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        self._record(name)

    def json(self, name: str, obj: Any) -> None:
        (self.root / name).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
        self._record(name)

    def manifest(self, status: str = "complete", error: str | None = None, extra: dict | None = None) -> None:
        m = {
            "subcommand": self.subcommand,
            "status": status,
            "code_version": __version__,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "files": self.files,
        }
        if error:
            m["error"] = error
        if extra:
            m.update(extra)
        (self.root / f"{self.subcommand}.manifest.json").write_text(json.dumps(m, indent=1, sort_keys=True) + "\n")


def _grid_json(g: WignerGrid) -> dict[str, Any]:
    d = {
        "mode": g.mode,
        "method": g.method,
        "N_s": g.N_s,
        "re_alpha": [float(x) for x in g.alphas[0].real],
        "im_alpha": [float(y) for y in g.alphas[:, 0].imag],
        "W": [[float(v) for v in row] for row in g.W],
        "p_n": [[[float(v) for v in pix] for pix in row] for row in g.p_n],
        "pixel_seeds": [[int(s) for s in row] for row in g.seeds],
    }
    if g.undetermined is not None:
        d["undetermined"] = [[int(u) for u in row] for row in g.undetermined]
    return d


def _grid_rows(g: WignerGrid) -> list[list[Any]]:
    rows = []
    for i in range(g.S):
        for j in range(g.S):
            a = g.alphas[i, j]
            und = int(g.undetermined[i, j]) if g.undetermined is not None else 0
            rows.append([float(a.real), float(a.imag), float(g.W[i, j]), und])
    return rows


# --------------------------------------------------------------------------
# subcommands


def cmd_design(cfg: RunConfig, out: Output, map_fn: Callable) -> None:
    params = cfg.system_params()
    table = build_phase_table(params, cfg.n_design, cfg.decoherence)
    rows = [
        [n, table.phases[n], table.p_b_ideal[n], table.p_b[n], table.p_b_std[n]] for n in range(table.n_design + 1)
    ]
    out.csv("design.csv", ["n", "phase_rad", "p_b_ideal", "p_b_mean", "p_b_std"], rows)
    out.json("derived.json", summary(params))


def cmd_ramsey(cfg: RunConfig, out: Output, map_fn: Callable) -> None:
    params = cfg.system_params()
    table = build_phase_table(params, cfg.n_design, cfg.decoherence)
    phi = cached_reference_phase(params)
    traj = params.beam.mean_trajectory()
    dim = params.space.oscillator.dim
    rows = []
    for n in range(table.n_design + 1):
        rho = np.zeros((dim, dim), complex)
        rho[n, n] = 1
        p_sim = qnd_probability(rho, traj, params, phi, Decoherence.off())
        rows.append([n, p_sim, table.p_b[n], table.p_b_std[n]])
    out.csv("ramsey.csv", ["n", "p_b_mean_trajectory", "p_b_mean", "p_b_std"], rows)
    out.json("ramsey.json", {"reference_phase_rad": phi})


def cmd_collapse(cfg: RunConfig, out: Output, map_fn: Callable) -> None:
    params = cfg.system_params()
    rho = prepare_initial_state(cfg.initial_state(), params.space.oscillator)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    rho, rec = qnd_sequence_array(rho, params, cfg.atoms_qnd, rng, cfg.decoherence, seed=cfg.seed)
    rows = [[k + 1, o, p] for k, (o, p) in enumerate(zip(rec.outcomes, rec.p_b_trace))]
    out.csv("collapse.csv", ["atom", "outcome", "p_b"], rows)
    out.json(
        "collapse.json",
        {
            "fock_estimate_a": rec.fock_estimate_a,
            "fock_estimate_b": rec.fock_estimate_b,
            "p_b_estimate": rec.p_b_estimate,
            "final_populations": [float(v) for v in np.real(np.diag(rho))],
        },
    )


def cmd_displace(cfg: RunConfig, out: Output, map_fn: Callable) -> None:
    params = cfg.system_params()
    plan = plan_displacement(params, cfg.drive, cfg.atoms_displacement, cfg.drive_ramp)
    space = params.space
    rho0 = DensityMatrix.product(prepare_initial_state(InitialStateSpec.fock(0), space.oscillator), "a", space)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    after = run_displacement_sequence(rho0, params, plan, rng, cfg.decoherence).oscillator()
    grid = square_grid(cfg.grid_size, cfg.grid_extent)
    w0 = wigner_of_density(rho0.oscillator(), grid)
    w1 = wigner_of_density(after, grid)
    rows = [
        [float(a.real), float(a.imag), float(b), float(c)] for a, b, c in zip(grid.ravel(), w0.ravel(), w1.ravel())
    ]
    out.csv("displace.csv", ["re_alpha", "im_alpha", "W_before", "W_after"], rows)
    target = coherent_state(space.oscillator, plan.alpha_N)
    out.json(
        "displace.json",
        {
            "alpha_N": [plan.alpha_N.real, plan.alpha_N.imag],
            "abs_alpha_N": abs(plan.alpha_N),
            "theta_rad": plan.theta,
            "xi": [plan.xi.real, plan.xi.imag],
            "fidelity_with_coherent": fidelity(after, target),
        },
    )


def cmd_tomography(cfg: RunConfig, out: Output, map_fn: Callable) -> None:
    params = cfg.system_params()
    grid = square_grid(cfg.grid_size, cfg.grid_extent)
    done = {"n": 0}

    def progress(i: int, total: int) -> None:
        done["n"] = i
        if i % max(1, total // 20) == 0 or i == total:
            log.info("tomography: %d/%d samples", i, total)

    try:
        g = run_tomography_grid(
            cfg.initial_state(), params, grid, cfg.samples, cfg.seed, cfg.settings(),
            mode="exact" if cfg.exact else "stochastic", map_fn=map_fn, progress=progress,
        )
    except Exception as e:
        out.manifest("failed", f"{type(e).__name__}: {e}", {"completed_samples": done["n"]})
        raise
    out.csv("wigner.csv", ["re_alpha", "im_alpha", "W", "undetermined"], _grid_rows(g))
    out.json("wigner.json", _grid_json(g))


def cmd_figdata(cfg: RunConfig, out: Output, map_fn: Callable) -> None:
    # Fast, deterministic series; the stochastic grid is left to `tomography`.
    for name, fn in (("design", cmd_design), ("ramsey", cmd_ramsey), ("displace", cmd_displace)):
        sub = Output(out.root / name, name, cfg)
        fn(cfg, sub, map_fn)
        sub.manifest()
        out.files.update({f"{name}/{k}": v for k, v in sub.files.items()})
    exact = dataclasses.replace(cfg, exact=True)
    sub = Output(out.root / "tomography", "tomography", exact)
    cmd_tomography(exact, sub, map_fn)
    sub.manifest()
    out.files.update({f"tomography/{k}": v for k, v in sub.files.items()})


COMMANDS: dict[str, Callable[[RunConfig, Output, Callable], None]] = {
    "design": cmd_design,
    "ramsey": cmd_ramsey,
    "collapse": cmd_collapse,
    "displace": cmd_displace,
    "tomography": cmd_tomography,
    "figdata": cmd_figdata,
}


def dispatch(cfg: RunConfig, subcommand: str, out_dir: str | os.PathLike = "results") -> int:
    if subcommand not in COMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    out = Output(Path(out_dir), subcommand, cfg)
    workers = cfg.workers or os.cpu_count() or 1
    log.info("validation summary: %s", json.dumps(summary(cfg.system_params())))
    if workers > 1 and subcommand == "tomography" and not cfg.exact:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            COMMANDS[subcommand](cfg, out, lambda f, it: pool.map(f, it, chunksize=4))
    else:
        COMMANDS[subcommand](cfg, out, map)
    out.manifest()
    return 0


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rydtomo", description="Fly-by Rydberg-atom tomography of a nano-oscillator.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--preset", choices=PRESETS, help="parameter preset (default table-s1 without --config)")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--workers", type=int, help="worker processes (default: available CPUs)")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--exact-mode", action="store_true", help="exact phonon distributions instead of sampling")
    p.add_argument("--method", choices=("a", "b"), help="Fock readout method")
    for ch in CHANNEL_NAMES:
        p.add_argument(f"--no-{ch}", action="store_true", help=f"disable {ch} decoherence")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes: dict[str, Any] = {}
    if args.preset:
        changes["preset"] = args.preset
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.exact_mode:
        changes["exact"] = True
    if args.method:
        changes["method"] = args.method
    off = {ch: False for ch in CHANNEL_NAMES if getattr(args, f"no_{ch}")}
    if off:
        changes["decoherence"] = dataclasses.replace(cfg.decoherence, **off)
    cfg = dataclasses.replace(cfg, **changes)
    cfg.system_params()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return dispatch(cfg, args.subcommand, args.out)
    except (ConfigError, UnreachableTarget) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (PropagationError, CalibrationError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
