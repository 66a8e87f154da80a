"""Column pattern search and look-up table checks.

Most tests run a scaled-down optimiser (40 mirrors, short search) for
speed; the session-scoped reference table carries the full-size checks
(monotonicity, stored-value consistency).
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from potshape.core import RealField1D
from potshape.inputmap import (
    Lut,
    LutEntry,
    OptimizerConfig,
    PatternObjective,
    TransversalPattern,
    build_lut,
    invert_pattern,
    load_lut,
    map_virtual_input,
    psf_beam_hash,
    save_lut,
    solve_pattern,
    transversal_field,
)
from potshape.optics import BeamProfile, PsfModel, column_grid


@pytest.fixture(scope="module")
def fast_cfg():
    return OptimizerConfig(n_t=40, population=40, generations=40, seed=3)


@pytest.fixture(scope="module")
def psf():
    return PsfModel()


@pytest.fixture(scope="module")
def beam():
    return BeamProfile()


@pytest.fixture(scope="module")
def fast_lut(fast_cfg, psf, beam):
    return build_lut(7, fast_cfg, psf, beam)


# ----------------------------------------------------------- primitives


def test_transversal_pattern_validation():
    p = TransversalPattern(bits=[0, 1, 1, 0])
    assert len(p) == 4
    with pytest.raises(ValueError):
        TransversalPattern(bits=[[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        TransversalPattern(bits=[0, 2, 0])


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(algorithm="annealing")
    with pytest.raises(ValueError):
        OptimizerConfig(population=1)
    with pytest.raises(ValueError):
        OptimizerConfig(generations=0)
    with pytest.raises(ValueError):
        OptimizerConfig(n_t=0)
    assert OptimizerConfig(n_t=50).effective_mutation_rate == pytest.approx(0.04)
    assert OptimizerConfig(mutation_rate=0.1).effective_mutation_rate == 0.1


def test_all_ones_column_is_normalised(psf, beam):
    ones = TransversalPattern(bits=np.ones(40, dtype=int))
    assert transversal_field(ones, psf, beam, 0.0)[0] == pytest.approx(1.0, rel=1e-14)
    # even pattern on a symmetric lattice gives an even field
    y = np.linspace(-10.0, 10.0, 41)
    e = transversal_field(ones, psf, beam, y)
    assert np.max(np.abs(e - e[::-1])) < 1e-14


def test_objective_zero_at_perfect_flat_field(fast_cfg, psf, beam):
    obj = PatternObjective(fast_cfg, psf, beam)
    zeros = np.zeros(fast_cfg.n_t, dtype=np.uint8)
    assert float(obj.value(zeros, 0.0)[0]) == 0.0
    assert float(obj.on_axis(zeros)[0]) == 0.0


def test_flip_values_match_explicit_flips(fast_cfg, psf, beam):
    obj = PatternObjective(fast_cfg, psf, beam)
    rng = np.random.default_rng(2)
    bits = rng.integers(0, 2, fast_cfg.n_t).astype(np.uint8)
    fv = obj.flip_values(bits, 0.4)
    for i in range(fast_cfg.n_t):
        b = bits.copy()
        b[i] ^= 1
        assert fv[i] == pytest.approx(float(obj.value(b, 0.4)[0]), rel=1e-12, abs=1e-15)


# -------------------------------------------------------- pattern search


def test_solve_pattern_extremes(fast_cfg, psf, beam):
    pat, achieved, residual = solve_pattern(0.0, fast_cfg, psf, beam)
    assert not np.any(pat.bits)
    assert achieved == 0.0 and residual == 0.0
    with pytest.raises(ValueError):
        solve_pattern(1.5, fast_cfg, psf, beam)
    with pytest.raises(ValueError):
        solve_pattern(-0.1, fast_cfg, psf, beam)


def test_solve_pattern_half_level(psf, beam):
    cfg = OptimizerConfig()  # full-size search
    pat, achieved, residual = solve_pattern(0.5, cfg, psf, beam)
    assert abs(achieved - 0.5) < 1e-3
    assert residual < 1e-4


def test_bitflip_algorithm_also_converges(psf, beam):
    cfg = OptimizerConfig(n_t=40, population=40, generations=40, algorithm="bitflip", seed=8)
    pat, achieved, _ = solve_pattern(0.3, cfg, psf, beam)
    assert abs(achieved - 0.3) < 0.05


def test_target_cap_keeps_achieved_close(fast_cfg, psf, beam):
    _, achieved, _ = solve_pattern(0.9, fast_cfg, psf, beam, target_cap=5e-3)
    assert abs(achieved - 0.9) <= 5e-3


# ------------------------------------------------------------ the table


def test_two_entry_table_is_the_extremes(fast_cfg, psf, beam):
    lut = build_lut(2, fast_cfg, psf, beam)
    assert not np.any(lut.entries[0].pattern.bits)
    assert np.all(lut.entries[1].pattern.bits == 1)
    assert lut.entries[0].achieved == 0.0
    assert lut.entries[1].achieved == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        build_lut(1, fast_cfg, psf, beam)


def test_fast_table_levels_and_monotonicity(fast_lut):
    nus = np.linspace(0.0, 1.0, 7)
    errs = np.abs(fast_lut.achieved_values() - nus)
    assert np.all(errs <= 4.0 * 0.05 / 6.0)
    assert np.all(np.diff(fast_lut.achieved_values()) >= 0.0)


def test_reference_table_is_monotone(reference_lut):
    ach = reference_lut.achieved_values()
    assert reference_lut.n_nu == 51
    assert np.all(np.diff(ach) >= 0.0)
    assert ach[0] == 0.0 and abs(ach[-1] - 1.0) < 1e-12


def test_reference_table_stored_values_are_consistent(
    scenario, reference_lut, reference_prepared
):
    # stored achieved values must equal |E(0)| recomputed from the bits
    obj = PatternObjective(scenario.optimizer_config(), scenario.psf, reference_prepared.beam)
    for e in reference_lut.entries:
        again = float(obj.on_axis(e.pattern.bits)[0])
        assert abs(e.achieved - again) < 1e-12


def test_build_is_deterministic(fast_cfg, psf, beam, fast_lut):
    again = build_lut(7, fast_cfg, psf, beam)
    assert np.array_equal(again.achieved_values(), fast_lut.achieved_values())
    for a, b in zip(again.entries, fast_lut.entries):
        assert np.array_equal(a.pattern.bits, b.pattern.bits)


def test_unreachable_accuracy_is_a_hard_error(fast_cfg, psf, beam):
    with pytest.raises(RuntimeError, match="out of tolerance"):
        build_lut(5, fast_cfg, psf, beam, accuracy=1e-9)


def test_quantisation_error_is_bounded(fast_lut):
    ach = fast_lut.achieved_values()
    worst_entry = np.max(np.abs(ach - np.linspace(0.0, 1.0, fast_lut.n_nu)))
    bound = 0.5 / (fast_lut.n_nu - 1) + worst_entry + 1e-12

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.0, 1.0))
    def check(nu):
        i = int(fast_lut.nearest_index(nu))
        assert abs(ach[i] - nu) <= bound

    check()


# -------------------------------------------------- addressing and i/o


def _toy_lut(n_nu=5, n_t=3):
    # synthetic table with distinct patterns, for addressing tests
    entries = []
    for k in range(n_nu):
        bits = np.zeros(n_t, dtype=np.uint8)
        # binary encoding of k keeps the patterns distinct
        for b in range(n_t):
            bits[b] = (k >> b) & 1
        entries.append(
            LutEntry(
                nu=k / (n_nu - 1),
                pattern=TransversalPattern(bits=bits),
                achieved=k / (n_nu - 1),
                residual=0.0,
            )
        )
    return Lut(
        entries=tuple(entries),
        n_t=n_t,
        pitch=1.0,
        gamma_perp=0.3,
        dy=4.0,
        psf_beam_sha256="0" * 64,
        seed=0,
    )


def test_nearest_index_rounds_ties_down():
    lut = _toy_lut(n_nu=5)
    # grid step 0.25; exact midpoints must pick the lower entry
    assert lut.nearest_index(0.125) == 0
    assert lut.nearest_index(0.375) == 1
    assert lut.nearest_index(0.13) == 1
    assert np.array_equal(lut.nearest_index([0.0, 0.49, 0.51, 1.0]), [0, 2, 2, 4])
    with pytest.raises(ValueError):
        lut.nearest_index(1.2)
    with pytest.raises(ValueError):
        lut.nearest_index(-0.2)


def test_map_and_invert_round_trip():
    lut = _toy_lut(n_nu=5)
    grid = column_grid(9, 1.0)
    nu = RealField1D(grid=grid, values=np.linspace(0.0, 1.0, 9))
    pattern = map_virtual_input(nu, lut)
    assert pattern.bits.shape == (3, 9)
    back = invert_pattern(pattern, lut)
    idx = lut.nearest_index(nu.values)
    expect = np.array([lut.entries[i].nu for i in idx])
    assert np.array_equal(back.values, expect)
    assert np.all(np.diff(idx) >= 0)


def test_invert_rejects_foreign_columns():
    lut = _toy_lut(n_nu=3)
    bits = np.zeros((3, 4), dtype=np.uint8)
    bits[:, 2] = (1, 1, 1)  # not a table pattern for n_nu = 3
    from potshape.optics import DmdPattern

    with pytest.raises(ValueError, match="column 2"):
        invert_pattern(DmdPattern(bits=bits), lut)


def test_all_zero_input_maps_to_dark_array():
    lut = _toy_lut(n_nu=5)
    nu = RealField1D(grid=column_grid(6, 1.0), values=np.zeros(6))
    assert not np.any(map_virtual_input(nu, lut).bits)


def test_half_input_hits_centre_entry(reference_lut):
    nu = RealField1D(grid=column_grid(4, 1.0), values=np.full(4, 0.5))
    pattern = map_virtual_input(nu, reference_lut)
    expect = reference_lut.entries[25].pattern.bits
    for j in range(4):
        assert np.array_equal(pattern.bits[:, j], expect)


def test_save_load_round_trip(tmp_path, fast_lut):
    p1 = tmp_path / "table.json"
    p2 = tmp_path / "table2.json"
    save_lut(fast_lut, p1)
    again = load_lut(p1)
    save_lut(again, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert again.n_nu == fast_lut.n_nu
    assert np.array_equal(again.achieved_values(), fast_lut.achieved_values())
    for a, b in zip(again.entries, fast_lut.entries):
        assert np.array_equal(a.pattern.bits, b.pattern.bits)


def test_load_rejects_malformed_files(tmp_path, fast_lut):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(ValueError):
        load_lut(bad)
    from potshape.inputmap import _lut_to_dict

    d = _lut_to_dict(fast_lut)
    d["n_nu"] = 99
    mismatched = tmp_path / "mismatch.json"
    mismatched.write_text(json.dumps(d))
    with pytest.raises(ValueError):
        load_lut(mismatched)


def test_psf_beam_hash_tracks_parameters():
    psf = PsfModel()
    h0 = psf_beam_hash(psf, BeamProfile(), 100, 1.0)
    assert h0 == psf_beam_hash(psf, BeamProfile(), 100, 1.0)
    assert h0 != psf_beam_hash(psf, BeamProfile(amplitude=2.0), 100, 1.0)
    assert h0 != psf_beam_hash(psf, BeamProfile(), 99, 1.0)
    assert h0 != psf_beam_hash(PsfModel(sigma_z=3.0), BeamProfile(), 100, 1.0)
