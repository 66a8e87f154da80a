"""Scenario configuration and the closed-loop shaping experiment.

A scenario bundles every physical and numerical constant of one desk
run: grid, condensate, optics, magnetic trap, desired potential, mirror
geometry, table and kernel settings, loop length, disturbance schedule
and seeds.  ``prepare`` turns a scenario into the derived objects
(calibrated beam, desired ground state, linearised gain, learning
kernel) and ``run_closed_loop`` drives the measure-learn-apply cycle:

  1. quantise the virtual input into a binary mirror pattern,
  2. propagate the pattern through the optics with the active
     transmission disturbances into the optical potential,
  3. relax the condensate in the total potential and measure its density,
  4. form the amplitude error against the desired density,
  5. update the virtual input through the learning kernel.

Everything is deterministic for a fixed master seed; exports are plain
CSV/PBM/JSON and byte-identical across reruns.
"""

from __future__ import annotations

import dataclasses
import hashlib
import importlib.metadata
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .condensate import (
    CondensateParams,
    ConvergenceError,
    GroundState,
    MeasurementConfig,
    SolverConfig,
    ground_state,
    interaction_parameter,
    measure_density,
)
from .core import RealField1D, SpatialGrid1D, Spectrum1D, integrate
from .ilc import (
    GainProfile,
    LearningKernel,
    VirtualInput,
    density_error,
    design_kernel,
    gain_profile,
    transfer_function,
    update,
)
from .inputmap import (
    Lut,
    OptimizerConfig,
    build_lut,
    map_virtual_input,
    psf_beam_hash,
)
from .optics import (
    BeamProfile,
    DarkSpot,
    DmdPattern,
    MagneticPotentialSpec,
    PsfModel,
    TransmissionDisturbance,
    calibrate_beam,
    column_grid,
    e_perp_max,
    magnetic_potential,
    potential_from_field,
    propagate_full,
)

__all__ = [
    "ConfigError",
    "GridSpec",
    "DmdSpec",
    "DesiredPotentialSpec",
    "LutSpec",
    "ControlSpec",
    "LoopSpec",
    "DisturbanceEvent",
    "ScenarioConfig",
    "Prepared",
    "IterationRecord",
    "RunResult",
    "desired_potential",
    "prepare",
    "build_scenario_lut",
    "inject_disturbances",
    "iterate_learning",
    "run_closed_loop",
    "input_activity",
    "export_records",
    "load_run",
    "load_scenario",
    "report",
    "scenario_to_dict",
    "scenario_from_dict",
    "lut_sha256",
    "error_norm",
]

log = logging.getLogger(__name__)

try:
    _VERSION = importlib.metadata.version("potshape")
except importlib.metadata.PackageNotFoundError:  # running from a source tree
    _VERSION = "unknown"


class ConfigError(ValueError):
    """A scenario or file input is malformed or inconsistent."""


# ---------------------------------------------------------------------------
# scenario schema


@dataclass(frozen=True)
class GridSpec:
    length: float = 250.0
    n_points: int = 2700

    def build(self) -> SpatialGrid1D:
        return SpatialGrid1D(length=self.length, n_points=self.n_points)


@dataclass(frozen=True)
class DmdSpec:
    n_rows: int = 100
    n_columns: int = 400
    pixel_pitch: float = 1.0

    def __post_init__(self):
        if self.n_rows < 1 or self.n_columns < 2 or self.pixel_pitch <= 0:
            raise ValueError("mirror array sizes out of range")


@dataclass(frozen=True)
class DesiredPotentialSpec:
    """Double well: (v_max/2)(1 + cos(k_v z)) inside |z| <= 2 pi / k_v,
    v_max outside; minima sit at z = +-pi/k_v."""

    v_max: float = 2.0 * np.pi * 8.0
    k_v: float = 7.53e-2

    def __post_init__(self):
        if self.v_max <= 0 or self.k_v <= 0:
            raise ValueError("v_max and k_v must be positive")


@dataclass(frozen=True)
class LutSpec:
    n_nu: int = 51
    gamma_perp: float = 0.3
    dy: float = 4.0
    population: int = 100
    generations: int = 200
    mutation_rate: float | None = None
    polish: bool = True

    def __post_init__(self):
        if self.n_nu < 2:
            raise ValueError("n_nu must be at least 2")


@dataclass(frozen=True)
class ControlSpec:
    """Kernel and gain settings; None picks the documented defaults
    (gamma_nu = 1e-2 max|G|^2, eps_opt = 5% of v_max, eps_mu = 5% of
    omega_perp).  gauge_offset shifts the desired potential and chemical
    potential by a constant inside the gain model only; the density is
    blind to such shifts but the gain formula is not."""

    gamma_nu: float | None = None
    eps_opt: float | None = None
    eps_mu: float | None = None
    gauge_offset: float = 0.0
    alpha_v: float = 1.0
    headroom: float = 1.3

    def __post_init__(self):
        if self.alpha_v <= 0 or self.headroom <= 0:
            raise ValueError("alpha_v and headroom must be positive")


@dataclass(frozen=True)
class LoopSpec:
    iterations: int = 80
    nu_initial: float = 0.5
    seed: int = 12345
    export_iterations: tuple | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (0.0 <= self.nu_initial <= 1.0):
            raise ValueError("nu_initial must lie in [0, 1]")


@dataclass(frozen=True)
class DisturbanceEvent:
    iteration: int
    spots: tuple

    def __post_init__(self):
        if self.iteration < 0:
            raise ValueError("disturbance iteration must be >= 0")
        object.__setattr__(self, "spots", tuple(self.spots))


def _default_magnetic() -> MagneticPotentialSpec:
    v_max = DesiredPotentialSpec().v_max
    return MagneticPotentialSpec(
        omega_par=2.0 * np.pi * 0.007,
        ripple_amplitude=0.05 * v_max,
        ripple_wavelength=10.0,
        ripple_phase=0.0,
    )


def _default_disturbances() -> tuple:
    spots = (
        DarkSpot(center=-41.0, width=2.0, depth=0.15),
        DarkSpot(center=34.0, width=2.0, depth=0.15),
        DarkSpot(center=46.0, width=2.0, depth=0.15),
    )
    return (DisturbanceEvent(iteration=40, spots=spots),)


@dataclass(frozen=True)
class ScenarioConfig:
    """Defaults reproduce the reference double-well shaping run."""

    grid: GridSpec = field(default_factory=GridSpec)
    condensate: CondensateParams = field(default_factory=CondensateParams)
    psf: PsfModel = field(default_factory=PsfModel)
    beam: BeamProfile = field(default_factory=BeamProfile)
    magnetic: MagneticPotentialSpec = field(default_factory=_default_magnetic)
    desired: DesiredPotentialSpec = field(default_factory=DesiredPotentialSpec)
    dmd: DmdSpec = field(default_factory=DmdSpec)
    lut: LutSpec = field(default_factory=LutSpec)
    control: ControlSpec = field(default_factory=ControlSpec)
    loop: LoopSpec = field(default_factory=LoopSpec)
    solver: SolverConfig = field(
        default_factory=lambda: SolverConfig(dtau=0.05, max_steps=60_000, tol=1e-10)
    )
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    disturbances: tuple = field(default_factory=_default_disturbances)

    def __post_init__(self):
        object.__setattr__(self, "disturbances", tuple(self.disturbances))
        last = -1
        for ev in self.disturbances:
            if not isinstance(ev, DisturbanceEvent):
                raise ConfigError("disturbances must be DisturbanceEvent entries")
            if ev.iteration < last:
                raise ConfigError("disturbance schedule must be sorted by iteration")
            last = ev.iteration

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            n_t=self.dmd.n_rows,
            pitch=self.dmd.pixel_pitch,
            gamma_perp=self.lut.gamma_perp,
            dy=self.lut.dy,
            population=self.lut.population,
            generations=self.lut.generations,
            mutation_rate=self.lut.mutation_rate,
            polish=self.lut.polish,
            seed=self.loop.seed,
        )


def _section_to_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj) if f.init}


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    d = {
        "grid": _section_to_dict(cfg.grid),
        "condensate": _section_to_dict(cfg.condensate),
        "psf": _section_to_dict(cfg.psf),
        "beam": _section_to_dict(cfg.beam),
        "magnetic": _section_to_dict(cfg.magnetic),
        "desired": _section_to_dict(cfg.desired),
        "dmd": _section_to_dict(cfg.dmd),
        "lut": _section_to_dict(cfg.lut),
        "control": _section_to_dict(cfg.control),
        "loop": _section_to_dict(cfg.loop),
        "solver": _section_to_dict(cfg.solver),
        "measurement": _section_to_dict(cfg.measurement),
        "disturbances": [
            {
                "iteration": ev.iteration,
                "spots": [_section_to_dict(s) for s in ev.spots],
            }
            for ev in cfg.disturbances
        ],
    }
    exp = d["loop"]["export_iterations"]
    if exp is not None:
        d["loop"]["export_iterations"] = list(exp)
    return d


def _build_section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be an object")
    allowed = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad section '{name}': {exc}") from exc


_SECTIONS = {
    "grid": GridSpec,
    "condensate": CondensateParams,
    "psf": PsfModel,
    "beam": BeamProfile,
    "magnetic": MagneticPotentialSpec,
    "desired": DesiredPotentialSpec,
    "dmd": DmdSpec,
    "lut": LutSpec,
    "control": ControlSpec,
    "loop": LoopSpec,
    "solver": SolverConfig,
    "measurement": MeasurementConfig,
}


def scenario_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS) - {"disturbances"})
    if unknown:
        raise ConfigError(f"unknown scenario sections: {', '.join(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            section = dict(data[name])
            if name == "loop" and section.get("export_iterations") is not None:
                section["export_iterations"] = tuple(
                    int(i) for i in section["export_iterations"]
                )
            kwargs[name] = _build_section(cls, section, name)
    if "disturbances" in data:
        events = []
        for i, ev in enumerate(data["disturbances"]):
            if not isinstance(ev, dict) or set(ev) - {"iteration", "spots"}:
                raise ConfigError(f"bad disturbance entry {i}")
            spots = tuple(
                _build_section(DarkSpot, s, f"disturbances[{i}].spots") for s in ev["spots"]
            )
            events.append(DisturbanceEvent(iteration=int(ev["iteration"]), spots=spots))
        kwargs["disturbances"] = tuple(events)
    try:
        return ScenarioConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return scenario_from_dict(data)


# ---------------------------------------------------------------------------
# derived objects


def desired_potential(spec: DesiredPotentialSpec, grid: SpatialGrid1D) -> RealField1D:
    z = grid.samples
    inside = np.abs(z) <= 2.0 * np.pi / spec.k_v
    values = np.where(
        inside, 0.5 * spec.v_max * (1.0 + np.cos(spec.k_v * z)), spec.v_max
    )
    return RealField1D(grid=grid, values=values)


@dataclass(frozen=True)
class Prepared:
    """Everything derived from a scenario that the loop consumes."""

    config: ScenarioConfig
    grid: SpatialGrid1D
    col_grid: SpatialGrid1D
    beam: BeamProfile
    e_perp_max: float
    v_magnetic: RealField1D
    v_desired: RealField1D
    ground_desired: GroundState
    rho_desired: RealField1D
    mu_desired: float
    gain: GainProfile
    transfer: Spectrum1D
    kernel: LearningKernel


def prepare(cfg: ScenarioConfig) -> Prepared:
    grid = cfg.grid.build()
    col_grid = column_grid(cfg.dmd.n_columns, cfg.dmd.pixel_pitch)
    beam = calibrate_beam(
        cfg.psf,
        cfg.beam,
        cfg.dmd.n_rows,
        cfg.dmd.pixel_pitch,
        v_max=cfg.desired.v_max,
        alpha_v=cfg.control.alpha_v,
        headroom=cfg.control.headroom,
    )
    e_max = e_perp_max(cfg.psf, beam, cfg.dmd.n_rows, cfg.dmd.pixel_pitch)
    v_mag = magnetic_potential(cfg.magnetic, cfg.condensate.mass, grid)
    v_des = desired_potential(cfg.desired, grid)
    gs_d = ground_state(v_des, cfg.condensate, cfg.solver)
    if not gs_d.converged:
        raise ConvergenceError("desired ground state did not converge")
    rho_d = gs_d.density
    c = cfg.control.gauge_offset
    gain = gain_profile(
        RealField1D(grid=grid, values=v_des.values + c),
        v_mag,
        gs_d.mu + c,
        cfg.condensate,
        e_max,
        alpha_v=cfg.control.alpha_v,
        eps_opt=(
            cfg.control.eps_opt
            if cfg.control.eps_opt is not None
            else 0.05 * cfg.desired.v_max
        ),
        eps_mu=cfg.control.eps_mu,
    )
    transfer = transfer_function(gain.alpha_bar, cfg.psf, grid)
    kernel = design_kernel(transfer, cfg.control.gamma_nu)
    log.info(
        "prepared scenario: mu_d=%.6g alpha_bar=%.6g gamma=%.6g kernel support %.4g um",
        gs_d.mu,
        gain.alpha_bar,
        kernel.gamma,
        kernel.kernel.grid.length,
    )
    return Prepared(
        config=cfg,
        grid=grid,
        col_grid=col_grid,
        beam=beam,
        e_perp_max=e_max,
        v_magnetic=v_mag,
        v_desired=v_des,
        ground_desired=gs_d,
        rho_desired=rho_d,
        mu_desired=gs_d.mu,
        gain=gain,
        transfer=transfer,
        kernel=kernel,
    )


def build_scenario_lut(cfg: ScenarioConfig, prepared: Prepared | None = None) -> Lut:
    if prepared is None:
        beam = calibrate_beam(
            cfg.psf,
            cfg.beam,
            cfg.dmd.n_rows,
            cfg.dmd.pixel_pitch,
            v_max=cfg.desired.v_max,
            alpha_v=cfg.control.alpha_v,
            headroom=cfg.control.headroom,
        )
    else:
        beam = prepared.beam
    return build_lut(cfg.lut.n_nu, cfg.optimizer_config(), cfg.psf, beam)


def inject_disturbances(schedule, n: int) -> TransmissionDisturbance:
    """Union of all dark spots activated at or before iteration n."""
    spots = []
    for ev in schedule:
        if ev.iteration <= n:
            spots.extend(ev.spots)
    return TransmissionDisturbance(spots=tuple(spots))


# ---------------------------------------------------------------------------
# the loop


@dataclass(frozen=True)
class IterationRecord:
    """State of iteration n: the input applied, the error observed, and
    the saturation count of the update that produced the next input."""

    n: int
    nu: np.ndarray
    e_rho: np.ndarray
    error_norm: float
    clamp_count: int
    mu: float
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("nu", "e_rho"):
            a = np.asarray(getattr(self, name), dtype=float).copy()
            a.flags.writeable = False
            object.__setattr__(self, name, a)


@dataclass(frozen=True)
class RunResult:
    config: ScenarioConfig
    prepared: Prepared
    lut: Lut | None
    records: tuple


def error_norm(e: RealField1D) -> float:
    return float(np.sqrt(integrate(RealField1D(grid=e.grid, values=e.values**2))))


def iterate_learning(
    nu0: VirtualInput,
    rho_desired: RealField1D,
    kernel: LearningKernel,
    measure,
    iterations: int,
    progress=None,
) -> tuple:
    """Generic learning iteration, independent of what produces the
    measurement.  ``measure(n, nu)`` returns (rho_meas, extras dict);
    extras land verbatim in the record.  On solver failure the records
    collected so far are attached to the raised error."""
    records = []
    nu = nu0
    for n in range(iterations):
        try:
            rho_meas, extras = measure(n, nu)
        except ConvergenceError as exc:
            exc.records = tuple(records)
            raise
        e = density_error(rho_meas, rho_desired)
        res = update(nu, e, kernel)
        records.append(
            IterationRecord(
                n=n,
                nu=nu.values,
                e_rho=e.values,
                error_norm=error_norm(e),
                clamp_count=res.clamp_count,
                mu=float(extras.get("mu", np.nan)),
                extras=extras,
            )
        )
        if progress is not None:
            progress(records[-1])
        nu = res.nu
    return tuple(records)


def run_closed_loop(
    cfg: ScenarioConfig,
    lut: Lut | None = None,
    prepared: Prepared | None = None,
    measurement_override=None,
    progress=None,
) -> RunResult:
    """Run the full shaping experiment for a scenario.

    ``measurement_override(n, nu, prepared)``, when given, replaces the
    entire physics chain with a synthetic measured density (test hook);
    no table is needed then.  Otherwise the table is built on the fly if
    not supplied.
    """
    if prepared is None:
        prepared = prepare(cfg)
    if measurement_override is None:
        if lut is None:
            log.info("no look-up table supplied; building one now")
            lut = build_scenario_lut(cfg, prepared)
        expected = psf_beam_hash(
            cfg.psf, prepared.beam, cfg.dmd.n_rows, cfg.dmd.pixel_pitch
        )
        if lut.psf_beam_sha256 != expected:
            log.warning(
                "look-up table was built for different optics (hash %.12s != %.12s)",
                lut.psf_beam_sha256,
                expected,
            )
        measure = _physics_measurement(cfg, prepared, lut)
    else:
        measure = lambda n, nu: (measurement_override(n, nu, prepared), {})
    nu0 = VirtualInput(
        field=RealField1D(
            grid=prepared.col_grid,
            values=np.full(cfg.dmd.n_columns, cfg.loop.nu_initial),
        )
    )
    records = iterate_learning(
        nu0, prepared.rho_desired, prepared.kernel, measure, cfg.loop.iterations, progress
    )
    return RunResult(config=cfg, prepared=prepared, lut=lut, records=records)


def _physics_measurement(cfg: ScenarioConfig, prepared: Prepared, lut: Lut):
    state = {"phi": None}

    def measure(n: int, nu: VirtualInput):
        pattern = map_virtual_input(nu.field, lut)
        e_out = propagate_full(pattern, prepared.beam, cfg.psf, prepared.grid)
        dist = inject_disturbances(cfg.disturbances, n)
        v_opt = potential_from_field(e_out, cfg.control.alpha_v, disturbance=dist)
        v = RealField1D(
            grid=prepared.grid, values=prepared.v_magnetic.values + v_opt.values
        )
        gs = ground_state(v, cfg.condensate, cfg.solver, initial=state["phi"])
        if not gs.converged:
            log.warning("iteration %d: warm start stalled, retrying cold", n)
            gs = ground_state(v, cfg.condensate, cfg.solver)
        if not gs.converged:
            raise ConvergenceError(f"ground state did not converge at iteration {n}")
        state["phi"] = gs.phi
        rng = np.random.default_rng([cfg.loop.seed, 7, n])
        rho_m = measure_density(gs.density, cfg.measurement, rng)
        extras = {
            "mu": gs.mu,
            "solver_steps": gs.n_steps,
            "pattern": pattern,
            "pattern_sha256": pattern.sha256(),
            "tau": dist.tau(prepared.grid.samples),
            "v": v.values.copy(),
            "v_opt": v_opt.values.copy(),
            "rho": rho_m.values.copy(),
        }
        return rho_m, extras

    return measure


# ---------------------------------------------------------------------------
# metrics


def input_activity(
    records,
    rho_desired: RealField1D,
    col_grid: SpatialGrid1D,
    threshold: float = 1e-4,
    start: int = 0,
    stop: int | None = None,
) -> dict:
    """Input motion per unit length in the empty vs. occupied region.

    The occupied region is where the desired density exceeds
    ``threshold`` of its peak, sampled at the column positions; motion
    is the summed |delta nu| between consecutive recorded iterations in
    [start, stop).  Returns rates per column and their ratio.
    """
    rho_cols = np.interp(
        col_grid.samples, rho_desired.grid.samples, rho_desired.values, left=0.0, right=0.0
    )
    occupied = rho_cols >= threshold * np.max(rho_desired.values)
    hidden = ~occupied
    if not np.any(occupied) or not np.any(hidden):
        raise ValueError("activity ratio needs both occupied and empty columns")
    sel = [r for r in records if r.n >= start and (stop is None or r.n < stop)]
    if len(sel) < 2:
        raise ValueError("need at least two recorded iterations in the window")
    total = np.zeros(len(rho_cols))
    for a, b in zip(sel[:-1], sel[1:]):
        total += np.abs(b.nu - a.nu)
    hidden_rate = float(total[hidden].sum() / hidden.sum())
    occupied_rate = float(total[occupied].sum() / occupied.sum())
    return {
        "hidden_rate": hidden_rate,
        "occupied_rate": occupied_rate,
        "ratio": hidden_rate / occupied_rate if occupied_rate > 0 else np.inf,
        "n_hidden": int(hidden.sum()),
        "n_occupied": int(occupied.sum()),
        "iterations": (sel[0].n, sel[-1].n),
    }


# ---------------------------------------------------------------------------
# persistence


_FLOAT_FMT = "%.17g"


def _default_export_iterations(n_total: int) -> tuple:
    picks = {0, 1, 2, 3, 4, 39, 40, 41, 45, 60, n_total - 1}
    return tuple(sorted(p for p in picks if 0 <= p < n_total))


def _write_rows(path, header, columns):
    try:
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in zip(*columns):
                fh.write(
                    ",".join(
                        str(c) if isinstance(c, (int, np.integer)) else _FLOAT_FMT % c
                        for c in row
                    )
                    + "\n"
                )
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _write_pbm(path, pattern: DmdPattern):
    try:
        with open(path, "w") as fh:
            fh.write(f"P1\n{pattern.n_l} {pattern.n_t}\n")
            for row in pattern.bits:
                fh.write(" ".join(str(int(b)) for b in row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def lut_sha256(lut: Lut) -> str:
    from .inputmap import _lut_to_dict

    blob = json.dumps(_lut_to_dict(lut), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def export_records(result: RunResult, out_dir) -> list:
    """Write the run artifacts; returns the list of files written.

    error_norms.csv always; per selected iteration a fields CSV on the
    measurement grid, the virtual input at its own column positions, and
    the mirror pattern as a portable bitmap; run.json echoes the full
    configuration plus derived constants.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    records = result.records
    cfg = result.config
    path = os.path.join(out_dir, "error_norms.csv")
    _write_rows(
        path,
        ("n", "error_norm", "mu", "clamp_count"),
        (
            [r.n for r in records],
            [r.error_norm for r in records],
            [r.mu for r in records],
            [r.clamp_count for r in records],
        ),
    )
    written.append(path)

    exp = cfg.loop.export_iterations
    if exp is None:
        exp = _default_export_iterations(len(records))
    z = result.prepared.grid.samples
    col_z = result.prepared.col_grid.samples
    rho_d = result.prepared.rho_desired.values
    for n in exp:
        if not (0 <= n < len(records)):
            raise ConfigError(f"export iteration {n} outside the run")
        r = records[n]
        nu_on_z = np.interp(z, col_z, r.nu)
        v = r.extras.get("v", np.full_like(z, np.nan))
        v_opt = r.extras.get("v_opt", np.full_like(z, np.nan))
        rho = r.extras.get("rho", (r.e_rho + np.sqrt(rho_d)) ** 2)
        path = os.path.join(out_dir, f"fields_{n:04d}.csv")
        _write_rows(
            path,
            ("z", "nu", "v", "v_opt", "rho", "e_rho"),
            (z, nu_on_z, v, v_opt, rho, r.e_rho),
        )
        written.append(path)
        path = os.path.join(out_dir, f"columns_{n:04d}.csv")
        _write_rows(path, ("z", "nu"), (col_z, r.nu))
        written.append(path)
        if "pattern" in r.extras:
            path = os.path.join(out_dir, f"pattern_{n:04d}.pbm")
            _write_pbm(path, r.extras["pattern"])
            written.append(path)

    meta = {
        "format": "potshape-run-v1",
        "package_version": _VERSION,
        "config": scenario_to_dict(cfg),
        "derived": {
            "e_perp_max": result.prepared.e_perp_max,
            "beam_amplitude": result.prepared.beam.amplitude,
            "mu_desired": result.prepared.mu_desired,
            "alpha_bar": result.prepared.gain.alpha_bar,
            "kappa": result.prepared.gain.kappa,
            "eps_opt": result.prepared.gain.eps_opt,
            "eps_mu": result.prepared.gain.eps_mu,
            "gamma_nu": result.prepared.kernel.gamma,
            "kernel_support": result.prepared.kernel.kernel.grid.length,
            "kernel_points": result.prepared.kernel.kernel.grid.n_points,
            "transfer_sha256": result.prepared.kernel.transfer_sha256,
            "grid_dz": result.prepared.grid.dz,
            "crossover_parameter_desired": interaction_parameter(
                result.prepared.rho_desired, cfg.condensate
            ),
            "lut_sha256": lut_sha256(result.lut) if result.lut is not None else None,
        },
        "iterations": len(records),
        "export_iterations": list(exp),
        "error_norms": [r.error_norm for r in records],
        "clamp_counts": [r.clamp_count for r in records],
    }
    path = os.path.join(out_dir, "run.json")
    try:
        with open(path, "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    written.append(path)
    return written


def load_run(out_dir) -> dict:
    """Read an exported run back: run.json, norms and field tables."""
    meta_path = os.path.join(out_dir, "run.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read {meta_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{meta_path}: {exc}") from exc
    if meta.get("format") != "potshape-run-v1":
        raise ConfigError(f"{meta_path}: not a recognised run export")

    def read_table(path):
        try:
            with open(path) as fh:
                header = fh.readline().strip().split(",")
                rows = [line.strip().split(",") for line in fh if line.strip()]
        except OSError as exc:
            raise OSError(f"cannot read {path}: {exc}") from exc
        cols = {
            h: np.array([float(r[i]) for r in rows]) for i, h in enumerate(header)
        }
        return cols

    norms = read_table(os.path.join(out_dir, "error_norms.csv"))
    fields = {}
    for n in meta["export_iterations"]:
        fields[n] = read_table(os.path.join(out_dir, f"fields_{n:04d}.csv"))
    return {"meta": meta, "norms": norms, "fields": fields}


def report(out_dir, tol: float = 1e-12) -> dict:
    """Recompute error norms from exported fields and verify the CSV.

    Returns a summary dict with ok flag, per-iteration norms, and the
    worst recomputation mismatch.
    """
    data = load_run(out_dir)
    norms = data["norms"]
    worst = 0.0
    checked = []
    for n, cols in data["fields"].items():
        z = cols["z"]
        e = cols["e_rho"]
        recomputed = float(np.sqrt(np.trapezoid(e**2, z)))
        stored = float(norms["error_norm"][int(np.flatnonzero(norms["n"] == n)[0])])
        mismatch = abs(recomputed - stored)
        worst = max(worst, mismatch)
        checked.append((int(n), stored, recomputed, mismatch))
    e0 = float(norms["error_norm"][0])
    summary = {
        "ok": worst <= tol,
        "worst_mismatch": worst,
        "checked": checked,
        "iterations": len(norms["n"]),
        "initial_norm": e0,
        "final_norm": float(norms["error_norm"][-1]),
        "best_norm": float(np.min(norms["error_norm"])),
        "reduction_final": float(norms["error_norm"][-1]) / e0 if e0 else np.nan,
    }
    return summary
