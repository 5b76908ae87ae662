import math

import numpy as np
import pytest

from furstlab.errors import NotConverged, SpectrumNotSimple
from furstlab.flags import config_distance, flag_distance, project_config
from furstlab.linalg import subspace_distance
from furstlab.presets import load_preset
from furstlab.topology import AdmissibleTopology
from furstlab.walk import (
    LyapunovSpectrum,
    MatrixMeasure,
    MollifierSpec,
    convergence_rate_probe,
    extend_configuration,
    lyapunov_spectrum,
    oseledets_frames,
    partial_sum_check,
    stable_flag_from_sequence,
    unstable_flag_from_sequence,
)


def conjugated_diagonal(values):
    """det-1 matrix with prescribed eigenvalue ratios but non-axis eigenvectors."""
    a = np.array([[1.0, 0.3, -0.2], [0.1, 1.2, 0.4], [-0.3, 0.2, 0.9]])
    g = a @ np.diag(values) @ np.linalg.inv(a)
    return g / np.cbrt(np.linalg.det(g))


def test_measure_validation():
    with pytest.raises(ValueError):
        MatrixMeasure(2, ((0.5, np.eye(2)), (0.6, np.eye(2))))
    with pytest.raises(ValueError):
        MatrixMeasure(2, ((1.0, np.diag([2.0, 1.0])),))


def test_measure_json_roundtrip():
    mu = load_preset("sl3-mollified")
    back = MatrixMeasure.from_json(mu.to_json())
    assert back.d == mu.d
    assert np.allclose(back.matrices, mu.matrices)
    assert np.allclose(back.weights, mu.weights)
    assert back.mollifier == mu.mollifier


def test_mollifier_samples_are_rotations_within_ball():
    rng = np.random.default_rng(0)
    for d in [2, 3, 4]:
        spec = MollifierSpec(epsilon=0.2)
        rots = spec.sample(d, 200, rng)
        assert np.allclose(np.einsum("nij,nik->njk", rots, rots),
                           np.tile(np.eye(d), (200, 1, 1)), atol=1e-10)
        assert np.allclose(np.linalg.det(rots), 1.0, atol=1e-10)
        # Rotation angle bounded by the truncation radius.
        traces = np.einsum("nii->n", rots)
        if d == 2:
            angles = np.arccos(np.clip(traces / 2.0, -1, 1))
            assert np.max(angles) <= 0.2 + 1e-9


def test_spectrum_diagonal_exact():
    g = np.diag([2.0, 1.0, 0.5])
    mu = MatrixMeasure(3, ((1.0, g),))
    spec = lyapunov_spectrum(mu, 10 ** 4, seed=0)
    assert np.allclose(spec.chi, np.log([2.0, 1.0, 0.5]), atol=1e-12)
    assert spec.is_simple()


def test_spectrum_rotations_zero():
    mu = load_preset("rot2")
    spec = lyapunov_spectrum(mu, 10 ** 5, seed=1)
    assert np.all(np.abs(spec.chi) <= 3 * spec.stderr + 1e-12)
    assert not spec.is_simple()


def test_spectrum_sums_to_zero_and_descends():
    for name in ["diag3", "rot2", "sl2z-free", "sl3-zariski", "sl3-mollified"]:
        mu = load_preset(name)
        spec = lyapunov_spectrum(mu, 10 ** 5, seed=2)
        total_se = np.sqrt(np.sum(spec.stderr ** 2))
        assert abs(np.sum(spec.chi)) <= 3 * total_se + 1e-12
        assert np.all(np.diff(spec.chi) <= 1e-12)


def test_spectrum_known_values():
    mu = load_preset("sl2z-free")
    spec = lyapunov_spectrum(mu, 2 * 10 ** 5, seed=3)
    assert abs(spec.chi[0] - 0.3211) < 0.005
    mu3 = load_preset("sl3-zariski")
    spec3 = lyapunov_spectrum(mu3, 2 * 10 ** 5, seed=3)
    assert np.allclose(spec3.chi, [0.4727, -0.0952, -0.3775], atol=0.01)
    assert spec3.is_simple()


def test_mollified_spectrum_trends_to_unmollified():
    base = load_preset("sl3-zariski")
    ref = lyapunov_spectrum(base, 2 * 10 ** 5, seed=4)
    devs = []
    for eps in [0.4, 0.1, 0.025]:
        mu = MatrixMeasure(3, base.atoms, MollifierSpec(epsilon=eps))
        spec = lyapunov_spectrum(mu, 2 * 10 ** 5, seed=4)
        devs.append(np.max(np.abs(spec.chi - ref.chi)))
    assert devs[-1] < devs[0]
    assert devs[-1] < 0.02


def test_limit_flags_cauchy():
    mu = load_preset("sl3-zariski")
    rng = np.random.default_rng(5)
    gs = list(mu.sample_batch(400, rng))
    half = unstable_flag_from_sequence(gs[:200])
    full = unstable_flag_from_sequence(gs)
    assert flag_distance(half, full) < 1e-10
    shalf = stable_flag_from_sequence(gs[:200])
    sfull = stable_flag_from_sequence(gs)
    assert flag_distance(shalf, sfull) < 1e-10


def test_stable_flag_diagonal_oracle():
    # For a diagonal matrix the stable flag levels are spans of the slowest
    # coordinate directions.
    g = np.diag([2.0, 1.0, 0.5])
    f = stable_flag_from_sequence([g] * 200)
    assert abs(abs(f.frame[2, 0]) - 1.0) < 1e-12
    assert abs(abs(f.frame[1, 1]) - 1.0) < 1e-12


def test_oseledets_frames_lines_diagonalize():
    mu = MatrixMeasure(3, ((1.0, conjugated_diagonal([4.0, 1.0, 0.25])),))
    spec = LyapunovSpectrum(np.log([4.0, 1.0, 0.25])
                            - np.log(4.0 * 1.0 * 0.25) / 3.0,
                            np.zeros(3), steps=0)
    frame = oseledets_frames(mu, depth=60, seed=6, spectrum=spec)
    assert frame.residual < 1e-8
    # Deterministic case: the lines are the eigenvectors.
    evals, evecs = np.linalg.eig(conjugated_diagonal([4.0, 1.0, 0.25]))
    order = np.argsort(-evals.real)
    for k, line in enumerate(frame.lines):
        v = evecs[:, order[k]].real
        v = v / np.linalg.norm(v)
        assert abs(abs(v @ line.frame[:, 0]) - 1.0) < 1e-8


def test_oseledets_frames_not_converged_at_tiny_depth():
    mu = load_preset("sl3-zariski")
    with pytest.raises(NotConverged):
        oseledets_frames(mu, depth=3, seed=7)


def test_oseledets_requires_simple_spectrum():
    mu = load_preset("rot2")
    with pytest.raises(SpectrumNotSimple):
        oseledets_frames(mu, depth=50, seed=8)


def test_partial_sum_check_presets():
    for name in ["sl2z-free", "sl3-zariski"]:
        mu = load_preset(name)
        spec = lyapunov_spectrum(mu, 2 * 10 ** 5, seed=9)
        for j in range(1, mu.d + 1):
            lhs, rhs, z = partial_sum_check(mu, spec, j, samples=20000, seed=10 + j)
            assert abs(z) < 3.0, (name, j, lhs, rhs, z)


def test_extend_configuration_restricts_back():
    mu = MatrixMeasure(3, ((1.0, conjugated_diagonal([4.0, 1.0, 0.25])),))
    spec = LyapunovSpectrum(np.log([4.0, 1.0, 0.25])
                            - np.log(4.0 * 1.0 * 0.25) / 3.0,
                            np.zeros(3), steps=0)
    frame = oseledetes = oseledets_frames(mu, depth=60, seed=11, spectrum=spec)
    from furstlab.flags import assemble_config

    t = AdmissibleTopology.finest(3)
    t2 = AdmissibleTopology(3, (frozenset({1, 2}), frozenset({2}), frozenset({3})))
    xp = assemble_config(t2, frame.Eminus, frame.Eplus)
    ext = extend_configuration(t, t2, xp)
    back = project_config(t, t2, ext)
    assert config_distance(back, xp) < 1e-8


def test_rate_probe_deterministic_slope():
    mu = MatrixMeasure(3, ((1.0, conjugated_diagonal([4.0, 1.0, 0.25])),))
    chi = np.log([4.0, 1.0, 0.25]) - np.log(4.0 * 1.0 * 0.25) / 3.0
    spec = LyapunovSpectrum(chi, np.zeros(3), steps=0)
    t = AdmissibleTopology.finest(3)
    t2 = AdmissibleTopology(3, (frozenset({1, 2}), frozenset({2}), frozenset({3})))
    probe = convergence_rate_probe(t, t2, mu, [8, 10, 12, 14], seed=12, spectrum=spec)
    assert not probe.degenerate
    assert abs(probe.slope - probe.bound) < 1e-6
    assert abs(probe.bound + math.log(4.0)) < 1e-12


def test_rate_probe_degenerate_when_nothing_removed():
    mu = MatrixMeasure(3, ((1.0, conjugated_diagonal([4.0, 1.0, 0.25])),))
    chi = np.log([4.0, 1.0, 0.25]) - np.log(4.0 * 1.0 * 0.25) / 3.0
    spec = LyapunovSpectrum(chi, np.zeros(3), steps=0)
    t = AdmissibleTopology.finest(3)
    probe = convergence_rate_probe(t, t, mu, [4, 6], seed=13, spectrum=spec)
    assert probe.degenerate
    assert probe.slope is None
