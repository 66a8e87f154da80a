"""Mapping virtual column inputs to binary transversal mirror patterns.

Each micromirror column carries a virtual input nu in [0, 1], the
normalised on-axis field the column should produce.  Because mirrors are
binary, nu is realised by choosing which of the n_t mirrors in the column
are on.  The choice is posed as a penalised least-squares problem

    J(b) = (|E(0)| - nu)^2
           + gamma_perp * int_{-dy}^{+dy} (|E(eta)| - nu)^2 d eta

where E(y) is the normalised transversal field of the bit vector b; the
penalty keeps the field flat across the central +-dy band so the achieved
value is robust against small alignment errors.  J is minimised per nu by
a seeded genetic algorithm followed by greedy single-bit-flip descent,
and the results are cached in a monotone look-up table (LUT) that the
closed loop queries by nearest-neighbour quantisation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .core import RealField1D
from .optics import BeamProfile, DmdPattern, PsfModel, column_grid, transversal_weights

__all__ = [
    "TransversalPattern",
    "OptimizerConfig",
    "PatternObjective",
    "LutEntry",
    "Lut",
    "transversal_field",
    "solve_pattern",
    "build_lut",
    "map_virtual_input",
    "invert_pattern",
    "save_lut",
    "load_lut",
]


@dataclass(frozen=True)
class TransversalPattern:
    """Bit vector for one column, index 0 at the most negative y."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 1 or not np.all((b == 0) | (b == 1)):
            raise ValueError("pattern must be a 1d array of 0/1")
        b = b.astype(np.uint8).copy()
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    def __len__(self):
        return len(self.bits)


@dataclass(frozen=True)
class OptimizerConfig:
    """Search settings for the per-column pattern optimisation.

    ``mutation_rate`` of None means the customary 2 / n_t.  The penalty
    integral is sampled every ``pitch`` across [-dy, +dy] and evaluated
    with trapezoid weights.
    """

    n_t: int = 100
    pitch: float = 1.0
    gamma_perp: float = 0.3
    dy: float = 4.0
    algorithm: str = "genetic"
    population: int = 100
    generations: int = 200
    mutation_rate: float | None = None
    tournament: int = 3
    elite: int = 2
    polish: bool = True
    max_polish_flips: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("genetic", "bitflip"):
            raise ValueError("algorithm must be 'genetic' or 'bitflip'")
        if self.n_t < 1 or self.population < 2 or self.generations < 1:
            raise ValueError("optimizer sizes out of range")

    @property
    def effective_mutation_rate(self) -> float:
        return 2.0 / self.n_t if self.mutation_rate is None else self.mutation_rate


def transversal_field(
    pattern: TransversalPattern, psf: PsfModel, beam: BeamProfile, y, pitch: float = 1.0
) -> np.ndarray:
    """Normalised transversal field of a column pattern at positions y.

    Normalisation is the on-axis value of the all-ones pattern, so the
    all-ones column evaluates to exactly 1 at y = 0.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w = transversal_weights(psf, beam, len(pattern), pitch, y)
    w0 = transversal_weights(psf, beam, len(pattern), pitch, [0.0])[0]
    return (w @ pattern.bits.astype(float)) / w0.sum()


class PatternObjective:
    """Precomputed weights for fast evaluation of the column objective."""

    def __init__(self, cfg: OptimizerConfig, psf: PsfModel, beam: BeamProfile):
        self.cfg = cfg
        n_pen = int(round(2.0 * cfg.dy / cfg.pitch)) + 1
        self.y_pen = np.linspace(-cfg.dy, cfg.dy, n_pen)
        w = transversal_weights(psf, beam, cfg.n_t, cfg.pitch, self.y_pen)
        w0 = transversal_weights(psf, beam, cfg.n_t, cfg.pitch, [0.0])[0]
        norm = w0.sum()
        if norm <= 0:
            raise ValueError("all-ones normalisation field is non-positive")
        self.w0 = w0 / norm
        self.w_pen = w / norm
        # trapezoid weights for the penalty integral, scaled by gamma_perp
        tw = np.full(n_pen, cfg.pitch)
        tw[0] *= 0.5
        tw[-1] *= 0.5
        self.pen_weights = cfg.gamma_perp * tw

    def on_axis(self, bits: np.ndarray) -> np.ndarray:
        """|E(0)| for a (pop, n_t) bit matrix or a single bit vector."""
        return np.abs(np.atleast_2d(bits).astype(float) @ self.w0)

    def value(self, bits: np.ndarray, nu: float) -> np.ndarray:
        b = np.atleast_2d(bits).astype(float)
        e0 = np.abs(b @ self.w0)
        ep = np.abs(b @ self.w_pen.T)
        pen = ((ep - nu) ** 2) @ self.pen_weights
        return (e0 - nu) ** 2 + pen

    def flip_values(self, bits: np.ndarray, nu: float) -> np.ndarray:
        """Objective of every single-bit flip of one bit vector, vectorised."""
        b = bits.astype(float)
        sign = 1.0 - 2.0 * b  # +1 where a bit turns on, -1 where it turns off
        e0 = float(b @ self.w0)
        ep = b @ self.w_pen.T
        e0_f = np.abs(e0 + sign * self.w0)
        ep_f = np.abs(ep[None, :] + sign[:, None] * self.w_pen.T)
        pen = ((ep_f - nu) ** 2) @ self.pen_weights
        return (e0_f - nu) ** 2 + pen


def _ga_minimise(obj: PatternObjective, nu: float, cfg: OptimizerConfig, rng) -> np.ndarray:
    n = cfg.n_t
    pop = rng.integers(0, 2, size=(cfg.population, n), dtype=np.uint8)
    # seed with the extremes and a couple of centre-out fills; these are
    # good starting points across the whole nu range
    pop[0] = 0
    pop[1] = 1
    order = np.argsort(np.abs(np.arange(n) - 0.5 * (n - 1)))
    for s, frac in enumerate((0.25, 0.5, 0.75)):
        if 2 + s < cfg.population:
            row = np.zeros(n, dtype=np.uint8)
            row[order[: int(frac * n)]] = 1
            pop[2 + s] = row
    cost = obj.value(pop, nu)
    best = pop[np.argmin(cost)].copy()
    best_cost = float(cost.min())
    rate = cfg.effective_mutation_rate
    for _ in range(cfg.generations):
        # tournament selection
        idx = rng.integers(0, cfg.population, size=(cfg.population, cfg.tournament))
        winners = idx[np.arange(cfg.population), np.argmin(cost[idx], axis=1)]
        parents = pop[winners]
        # uniform crossover of consecutive parent pairs
        n_pairs = cfg.population // 2
        mask = rng.integers(0, 2, size=(n_pairs, n), dtype=np.uint8)
        a = parents[0 : 2 * n_pairs : 2]
        b = parents[1 : 2 * n_pairs : 2]
        children = np.concatenate([np.where(mask, a, b), np.where(mask, b, a)])
        if cfg.population % 2:
            children = np.concatenate([children, parents[-1:]])
        # bit-flip mutation
        flips = rng.random(children.shape) < rate
        children = np.where(flips, 1 - children, children).astype(np.uint8)
        ccost = obj.value(children, nu)
        # elitism: keep the best of the previous generation
        keep = np.argsort(cost)[: cfg.elite]
        worst = np.argsort(ccost)[::-1][: cfg.elite]
        children[worst] = pop[keep]
        ccost[worst] = cost[keep]
        pop, cost = children, ccost
        gen_best = int(np.argmin(cost))
        if cost[gen_best] < best_cost:
            best_cost = float(cost[gen_best])
            best = pop[gen_best].copy()
    return best


def _polish(obj: PatternObjective, nu: float, bits: np.ndarray, max_flips: int) -> np.ndarray:
    """Greedy steepest-descent single-bit flips until no flip improves."""
    b = bits.copy()
    cost = float(obj.value(b, nu)[0])
    for _ in range(max_flips):
        fc = obj.flip_values(b, nu)
        i = int(np.argmin(fc))
        if fc[i] >= cost - 1e-18:
            break
        b[i] ^= 1
        cost = float(fc[i])
    return b


def _flip_on_axis(obj: PatternObjective, bits: np.ndarray) -> np.ndarray:
    """|E(0)| after each single-bit flip of one bit vector."""
    b = bits.astype(float)
    sign = 1.0 - 2.0 * b
    return np.abs(float(b @ obj.w0) + sign * obj.w0)


def _tune_to_target(
    obj: PatternObjective, nu: float, bits: np.ndarray, tol: float, max_flips: int
) -> np.ndarray:
    """Walk |E(0)| onto nu by single flips, using the fine-grained wing
    weights; stops once within tol or when no flip moves closer."""
    b = bits.copy()
    err = abs(float(obj.on_axis(b)[0]) - nu)
    for _ in range(max_flips):
        if err <= tol:
            break
        e0f = _flip_on_axis(obj, b)
        errs = np.abs(e0f - nu)
        i = int(np.argmin(errs))
        if errs[i] >= err - 1e-18:
            break
        b[i] ^= 1
        err = float(errs[i])
    return b


def _polish_constrained(
    obj: PatternObjective, nu: float, bits: np.ndarray, cap: float, max_flips: int
) -> np.ndarray:
    """Greedy objective descent restricted to flips keeping |E(0) - nu| <= cap."""
    b = bits.copy()
    cost = float(obj.value(b, nu)[0])
    for _ in range(max_flips):
        fc = obj.flip_values(b, nu)
        e0f = _flip_on_axis(obj, b)
        fc = np.where(np.abs(e0f - nu) <= cap, fc, np.inf)
        i = int(np.argmin(fc))
        if fc[i] >= cost - 1e-18:
            break
        b[i] ^= 1
        cost = float(fc[i])
    return b


def solve_pattern(
    nu_target: float,
    cfg: OptimizerConfig,
    psf: PsfModel,
    beam: BeamProfile,
    objective: PatternObjective | None = None,
    rng=None,
    seed_patterns=(),
    target_cap: float | None = None,
):
    """Minimise the column objective for one target value.

    Returns (pattern, achieved, residual) where achieved is |E(0)| of the
    returned bits and residual the full objective value.  ``seed_patterns``
    are injected as polish candidates (used by the LUT monotone repair).

    With ``target_cap`` set the search additionally keeps |achieved - nu|
    within the cap: near the extremes the unconstrained optimum trades a
    few 1e-3 of on-axis accuracy against the beam-envelope droop across
    the penalty band, which is the better objective value but useless for
    a table that is addressed by the achieved level.  Candidates outside
    the cap are walked onto the target with the fine-grained wing weights
    and then re-polished among cap-respecting flips; candidates inside
    the cap win by objective value.
    """
    if not (0.0 <= nu_target <= 1.0):
        raise ValueError("target value must lie in [0, 1]")
    obj = objective if objective is not None else PatternObjective(cfg, psf, beam)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    candidates = []
    if cfg.algorithm == "genetic":
        candidates.append(_ga_minimise(obj, nu_target, cfg, rng))
    else:
        candidates.append(rng.integers(0, 2, size=cfg.n_t, dtype=np.uint8))
    candidates.extend(np.asarray(s, dtype=np.uint8) for s in seed_patterns)
    if target_cap is not None:
        candidates.append(np.zeros(cfg.n_t, dtype=np.uint8))
        candidates.append(np.ones(cfg.n_t, dtype=np.uint8))
    best = best_capped = None
    best_cost = capped_cost = np.inf
    for c in candidates:
        if cfg.polish:
            c = _polish(obj, nu_target, c, cfg.max_polish_flips)
        if target_cap is not None and abs(float(obj.on_axis(c)[0]) - nu_target) > target_cap:
            c = _tune_to_target(obj, nu_target, c, 0.25 * target_cap, cfg.max_polish_flips)
            c = _polish_constrained(obj, nu_target, c, target_cap, cfg.max_polish_flips)
        cost = float(obj.value(c, nu_target)[0])
        if cost < best_cost:
            best, best_cost = c, cost
        if target_cap is not None and abs(float(obj.on_axis(c)[0]) - nu_target) <= target_cap:
            if cost < capped_cost:
                best_capped, capped_cost = c, cost
    if best_capped is not None:
        best, best_cost = best_capped, capped_cost
    achieved = float(obj.on_axis(best)[0])
    return TransversalPattern(bits=best), achieved, best_cost


@dataclass(frozen=True)
class LutEntry:
    nu: float
    pattern: TransversalPattern
    achieved: float
    residual: float


@dataclass(frozen=True)
class Lut:
    """Monotone table nu_k = k / (n_nu - 1) -> column pattern.

    The header records everything needed to recompute the table: problem
    size, penalty settings, a hash of the psf/beam parameters and the
    master seed.
    """

    entries: tuple
    n_t: int
    pitch: float
    gamma_perp: float
    dy: float
    psf_beam_sha256: str
    seed: int

    @property
    def n_nu(self) -> int:
        return len(self.entries)

    def nearest_index(self, nu) -> np.ndarray:
        """Nearest table index for values in [0, 1]; exact ties round down."""
        nu = np.asarray(nu, dtype=float)
        if np.any(nu < -1e-12) or np.any(nu > 1.0 + 1e-12):
            raise ValueError("virtual input out of [0, 1]")
        x = np.clip(nu, 0.0, 1.0) * (self.n_nu - 1)
        return np.clip(np.ceil(x - 0.5), 0, self.n_nu - 1).astype(int)

    def achieved_values(self) -> np.ndarray:
        return np.array([e.achieved for e in self.entries])


def psf_beam_hash(psf: PsfModel, beam: BeamProfile, n_t: int, pitch: float) -> str:
    payload = json.dumps(
        {
            "sigma_z": psf.sigma_z,
            "w_y": psf.w_y,
            "gy_zero_cut": psf.gy_zero_cut,
            "beam_amplitude": beam.amplitude,
            "beam_sigma_y": beam.sigma_y,
            "beam_sigma_z": beam.sigma_z,
            "n_t": n_t,
            "pitch": pitch,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def _monotone_repair(obj, cfg, psf, beam, nus, patterns, achieved, residual, target_cap):
    """Re-solve entries that break monotonicity, warm started from their
    lower neighbour; as a last resort lift the achieved value by greedy
    flips constrained to stay at or above the neighbour."""
    for k in range(1, len(nus)):
        if achieved[k] >= achieved[k - 1]:
            continue
        rng = np.random.default_rng([cfg.seed, k, 7919])
        pat, ach, res = solve_pattern(
            nus[k], cfg, psf, beam, objective=obj, rng=rng,
            seed_patterns=(patterns[k - 1].bits, patterns[k].bits),
            target_cap=target_cap,
        )
        if ach < achieved[k - 1]:
            bits = patterns[k - 1].bits.copy()
            for _ in range(cfg.n_t):
                fc = obj.flip_values(bits, nus[k])
                e0 = np.abs(
                    bits.astype(float) @ obj.w0
                    + (1.0 - 2.0 * bits.astype(float)) * obj.w0
                )
                ok = e0 >= achieved[k - 1] - 1e-15
                if not np.any(ok):
                    break
                fc = np.where(ok, fc, np.inf)
                i = int(np.argmin(fc))
                cur = float(obj.value(bits, nus[k])[0])
                if fc[i] >= cur:
                    break
                bits[i] ^= 1
            pat = TransversalPattern(bits=bits)
            ach = float(obj.on_axis(bits)[0])
            res = float(obj.value(bits, nus[k])[0])
        if ach < achieved[k - 1]:
            raise RuntimeError(
                f"monotone repair failed for table entry {k} "
                f"({ach:.6f} < {achieved[k - 1]:.6f})"
            )
        patterns[k], achieved[k], residual[k] = pat, ach, res


def build_lut(
    n_nu: int,
    cfg: OptimizerConfig,
    psf: PsfModel,
    beam: BeamProfile,
    accuracy: float | None = None,
) -> Lut:
    """Solve all n_nu column problems and assemble the monotone table.

    Entry k targets nu_k = k / (n_nu - 1).  The extreme entries are pinned
    to the all-off and all-on patterns: all-off is the exact optimum and
    all-on anchors the normalisation at achieved = 1.  Every other entry
    gets its own deterministic child seed so the build is reproducible
    and could be parallelised per entry.

    ``accuracy`` is the per-entry target for |achieved - nu_k|, by default
    0.05 / (n_nu - 1), i.e. a twentieth of the table step.  Entries worse
    than four times that are a hard error: a table that cannot realise its
    own addressing levels would silently bias the closed loop.
    """
    if n_nu < 2:
        raise ValueError("table needs at least the two extreme entries")
    acc = 0.05 / (n_nu - 1) if accuracy is None else float(accuracy)
    obj = PatternObjective(cfg, psf, beam)
    nus = np.linspace(0.0, 1.0, n_nu)
    patterns: list = [None] * n_nu
    achieved = np.zeros(n_nu)
    residual = np.zeros(n_nu)
    for k, nu in enumerate(nus):
        if k == 0:
            bits = np.zeros(cfg.n_t, dtype=np.uint8)
        elif k == n_nu - 1:
            bits = np.ones(cfg.n_t, dtype=np.uint8)
        else:
            rng = np.random.default_rng([cfg.seed, k])
            pat, ach, res = solve_pattern(
                nu, cfg, psf, beam, objective=obj, rng=rng, target_cap=acc
            )
            patterns[k], achieved[k], residual[k] = pat, ach, res
            continue
        patterns[k] = TransversalPattern(bits=bits)
        achieved[k] = float(obj.on_axis(bits)[0])
        residual[k] = float(obj.value(bits, nus[k])[0])
    _monotone_repair(obj, cfg, psf, beam, nus, patterns, achieved, residual, acc)
    bad = [k for k in range(n_nu) if abs(achieved[k] - nus[k]) > 4.0 * acc]
    if bad:
        raise RuntimeError(
            "table entries out of tolerance: "
            + ", ".join(
                f"k={k} nu={nus[k]:.3f} achieved={achieved[k]:.6f}" for k in bad
            )
        )
    entries = tuple(
        LutEntry(nu=float(nus[k]), pattern=patterns[k],
                 achieved=float(achieved[k]), residual=float(residual[k]))
        for k in range(n_nu)
    )
    return Lut(
        entries=entries,
        n_t=cfg.n_t,
        pitch=cfg.pitch,
        gamma_perp=cfg.gamma_perp,
        dy=cfg.dy,
        psf_beam_sha256=psf_beam_hash(psf, beam, cfg.n_t, cfg.pitch),
        seed=cfg.seed,
    )


def map_virtual_input(nu: RealField1D, lut: Lut) -> DmdPattern:
    """Quantise per-column virtual inputs to table entries, assemble bits."""
    idx = lut.nearest_index(nu.values)
    bits = np.stack([lut.entries[i].pattern.bits for i in idx], axis=1)
    return DmdPattern(bits=bits, pixel_pitch=lut.pitch)


def invert_pattern(pattern: DmdPattern, lut: Lut) -> RealField1D:
    """Recover the quantised virtual input of a pattern built from the table.

    Every column must match a table entry bit for bit; anything else
    raises, because it cannot have come from :func:`map_virtual_input`.
    """
    lookup = {e.pattern.bits.tobytes(): e.nu for e in lut.entries}
    values = np.empty(pattern.n_l)
    for j in range(pattern.n_l):
        key = np.ascontiguousarray(pattern.bits[:, j]).tobytes()
        if key not in lookup:
            raise ValueError(f"column {j} does not match any table entry")
        values[j] = lookup[key]
    return RealField1D(grid=column_grid(pattern.n_l, pattern.pixel_pitch), values=values)


def _lut_to_dict(lut: Lut) -> dict:
    return {
        "format": "potshape-lut-v1",
        "n_t": lut.n_t,
        "n_nu": lut.n_nu,
        "pitch": lut.pitch,
        "gamma_perp": lut.gamma_perp,
        "dy": lut.dy,
        "psf_beam_sha256": lut.psf_beam_sha256,
        "seed": lut.seed,
        "entries": [
            {
                "nu": e.nu,
                "bits": "".join(str(int(b)) for b in e.pattern.bits),
                "achieved": e.achieved,
                "residual": e.residual,
            }
            for e in lut.entries
        ],
    }


def save_lut(lut: Lut, path) -> None:
    with open(path, "w") as fh:
        json.dump(_lut_to_dict(lut), fh, indent=1)
        fh.write("\n")


def load_lut(path) -> Lut:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("format") != "potshape-lut-v1":
        raise ValueError("not a recognised look-up table file")
    entries = tuple(
        LutEntry(
            nu=float(e["nu"]),
            pattern=TransversalPattern(
                bits=np.array([int(c) for c in e["bits"]], dtype=np.uint8)
            ),
            achieved=float(e["achieved"]),
            residual=float(e["residual"]),
        )
        for e in data["entries"]
    )
    if len(entries) != data["n_nu"]:
        raise ValueError("entry count does not match header")
    return Lut(
        entries=entries,
        n_t=int(data["n_t"]),
        pitch=float(data["pitch"]),
        gamma_perp=float(data["gamma_perp"]),
        dy=float(data["dy"]),
        psf_beam_sha256=str(data["psf_beam_sha256"]),
        seed=int(data["seed"]),
    )
