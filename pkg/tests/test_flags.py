import math

import numpy as np
import pytest
from scipy.linalg import expm

from furstlab.errors import (
    DegenerateAngle,
    NotComparable,
    NotGeneralPosition,
    NotSameFiber,
    TopologyMismatch,
)
from furstlab.flags import (
    Configuration,
    FlagPoint,
    assemble_config,
    config_distance,
    config_from_lines,
    config_to_partial_flag,
    fiber_chart,
    fiber_metric,
    flag_distance,
    flag_from_matrix,
    general_position,
    invariant_rn_derivative,
    invariant_rn_derivative_batch,
    partial_flag_from_matrix,
    partial_flag_to_config,
    project_config,
    sample_invariant_flag,
    sample_invariant_flags,
    transversal_lines,
)
from furstlab.linalg import Subspace, qr_positive, qr_positive_batch, subspace_distance
from furstlab.topology import AdmissibleTopology, IntervalPartition, filtered_from_partition


def gram_schmidt(m):
    """Plain textbook Gram-Schmidt, the oracle for canonical flag frames."""
    d = m.shape[0]
    out = np.zeros_like(m, dtype=float)
    for k in range(d):
        v = m[:, k].astype(float)
        for j in range(k):
            v = v - (out[:, j] @ m[:, k]) * out[:, j]
        out[:, k] = v / np.linalg.norm(v)
    return out


def test_flag_from_matrix_matches_gram_schmidt():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.standard_normal((4, 4))
        f = flag_from_matrix(m)
        gs = gram_schmidt(m)
        assert np.allclose(np.abs(f.frame), np.abs(gs), atol=1e-10)
        for i in range(1, 5):
            assert subspace_distance(f.level(i), Subspace(gs[:, :i])) < 1e-10


def test_flag_distance_zero_iff_same_spans():
    rng = np.random.default_rng(1)
    m = rng.standard_normal((3, 3))
    f1 = flag_from_matrix(m)
    # Multiplying by an upper triangular matrix preserves every level.
    u = np.triu(rng.standard_normal((3, 3))) + 3 * np.eye(3)
    f2 = flag_from_matrix(m @ u)
    assert flag_distance(f1, f2) < 1e-12
    f3 = flag_from_matrix(rng.standard_normal((3, 3)))
    assert flag_distance(f1, f3) > 1e-3


def test_general_position_determinant_oracle():
    # Transversality of U_j and U'_{d-j} is equivalent to the stacked frame
    # matrix being nonsingular at every level.
    rng = np.random.default_rng(2)
    for _ in range(20):
        f = flag_from_matrix(rng.standard_normal((4, 4)))
        f2 = flag_from_matrix(rng.standard_normal((4, 4)))
        ok, margin = general_position(f, f2)
        dets = [
            abs(np.linalg.det(np.column_stack([f.frame[:, :j], f2.frame[:, : 4 - j]])))
            for j in range(1, 4)
        ]
        assert ok == (min(dets) > 1e-12)
        assert margin > 0


def test_general_position_fails_for_shared_subspace():
    f = flag_from_matrix(np.eye(3))
    ok, margin = general_position(f, f)
    assert not ok
    assert margin < 1e-12


def test_transversal_lines_diagonal_oracle():
    # For coordinate flags in opposite order the lines are the axes.
    d = 3
    f = flag_from_matrix(np.eye(d))
    f2 = flag_from_matrix(np.eye(d)[:, ::-1])
    lines = transversal_lines(f, f2)
    assert np.allclose(np.abs(lines), np.eye(d), atol=1e-10)


def test_assemble_config_satisfies_lattice_identities():
    rng = np.random.default_rng(3)
    t = AdmissibleTopology.finest(3)
    f = flag_from_matrix(rng.standard_normal((3, 3)))
    f2 = flag_from_matrix(rng.standard_normal((3, 3)))
    x = assemble_config(t, f, f2)
    assert x.validate() < 1e-8
    for iset in t.open_sets():
        assert x.space(iset).k == len(iset)


def test_project_config_keeps_coarse_sets():
    rng = np.random.default_rng(4)
    t = AdmissibleTopology.finest(3)
    t2 = AdmissibleTopology(3, (frozenset({1, 2}), frozenset({2}), frozenset({3})))
    x = assemble_config(t, flag_from_matrix(rng.standard_normal((3, 3))),
                        flag_from_matrix(rng.standard_normal((3, 3))))
    p = project_config(t, t2, x)
    for iset in t2.open_sets():
        assert subspace_distance(p.space(iset), x.space(iset)) < 1e-14
    with pytest.raises(NotComparable):
        project_config(t2, t, p)


def test_config_distance_requires_same_topology():
    rng = np.random.default_rng(5)
    t = AdmissibleTopology.finest(3)
    t2 = AdmissibleTopology.coarsest(3)
    x = config_from_lines(t, rng.standard_normal((3, 3)))
    y = config_from_lines(t2, rng.standard_normal((3, 3)))
    with pytest.raises(TopologyMismatch):
        config_distance(x, y)


def test_config_from_lines_rejects_dependent_lines():
    t = AdmissibleTopology.finest(3)
    lines = np.array([[1.0, 1.0, 0.0], [0.0, 1e-13, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(NotGeneralPosition):
        config_from_lines(t, lines)


def chart_pair(seed=6, d=3):
    rng = np.random.default_rng(seed)
    t = AdmissibleTopology.finest(d)
    t2 = AdmissibleTopology(
        d,
        (frozenset({1, 2}),) + tuple(frozenset({i}) for i in range(2, d + 1)),
    )
    x = assemble_config(t, flag_from_matrix(rng.standard_normal((d, d))),
                        flag_from_matrix(rng.standard_normal((d, d))))
    return t, t2, x


def test_fiber_chart_fixes_base_and_moves_along_fiber():
    t, t2, x = chart_pair()
    chart = fiber_chart(x, t, t2)
    y = chart(0.3)
    base_x = project_config(t, t2, x)
    base_y = project_config(t, t2, y)
    assert config_distance(base_x, base_y) < 1e-8
    assert config_distance(x, y) > 1e-3
    assert config_distance(chart(0.0), x) < 1e-10


def test_fiber_chart_coordinate_roundtrip():
    t, t2, x = chart_pair()
    chart = fiber_chart(x, t, t2)
    for u in [-1.2, -0.4, 0.0, 0.5, 1.3]:
        got = chart.coordinate(chart(u))
        assert abs(got - u) < 1e-8


def test_fiber_chart_derivative_matches_finite_differences():
    # |phi'(u)| computed from the fiber metric against the closed form, on a
    # grid of anchor angles and chart parameters.
    rng = np.random.default_rng(7)
    t, t2, _ = chart_pair()
    d = 3
    i, j = 1, 2
    eps = 1e-6
    for theta in [0.3, 0.8, 1.2, 1.5]:
        # Build a base point whose anchor angle is exactly theta: lines for
        # atoms 1 and 2 at angle theta inside a random configuration plane.
        q = qr_positive(rng.standard_normal((d, d)))[0]
        lines = np.column_stack([
            q[:, 0],
            math.cos(theta) * q[:, 0] + math.sin(theta) * q[:, 1],
            q[:, 2],
        ])
        x = config_from_lines(t, lines)
        chart = fiber_chart(x, t, t2)
        assert abs(chart.theta - theta) < 1e-10
        for u in [-1.0, -0.3, 0.0, 0.4, 1.1]:
            fd = fiber_metric(chart(u + eps), chart(u - eps), t, t2) / (2 * eps)
            closed = chart.derivative(u)
            assert abs(fd - closed) / closed < 1e-5


def test_fiber_chart_lipschitz_window():
    # Every sampled distortion ratio is at most 1/tan(theta/2); local ratios
    # (adjacent grid points) also stay above tan(theta/2).  The lower bound
    # holds only locally: the angle metric saturates for far apart points.
    t, t2, _ = chart_pair()
    rng = np.random.default_rng(8)
    for theta in [0.5, 1.0, 1.4]:
        q = qr_positive(rng.standard_normal((3, 3)))[0]
        lines = np.column_stack([
            q[:, 0],
            math.cos(theta) * q[:, 0] + math.sin(theta) * q[:, 1],
            q[:, 2],
        ])
        chart = fiber_chart(config_from_lines(t, lines), t, t2)
        lo, hi = math.tan(theta / 2), 1.0 / math.tan(theta / 2)
        us = np.linspace(-1.4, 1.4, 25)
        pts = [chart(u) for u in us]
        for a in range(len(us)):
            for b in range(a + 1, len(us)):
                ratio = fiber_metric(pts[a], pts[b], t, t2) / (us[b] - us[a])
                assert ratio <= hi + 1e-9
                if b == a + 1:
                    assert ratio >= lo - 1e-3


def test_fiber_chart_rejects_degenerate_angle():
    t, t2, _ = chart_pair()
    rng = np.random.default_rng(9)
    q = qr_positive(rng.standard_normal((3, 3)))[0]
    theta = 1e-9
    lines = np.column_stack([
        q[:, 0],
        math.cos(theta) * q[:, 0] + math.sin(theta) * q[:, 1],
        q[:, 2],
    ])
    with pytest.raises(DegenerateAngle):
        fiber_chart(config_from_lines(t, lines), t, t2)


def test_fiber_metric_rejects_different_bases():
    t, t2, x = chart_pair(seed=10)
    _, _, y = chart_pair(seed=11)
    with pytest.raises(NotSameFiber):
        fiber_metric(x, y, t, t2)


def test_rn_derivative_hand_value_d2():
    q = IntervalPartition.full(2)
    x = partial_flag_from_matrix(np.eye(2), q)
    g = np.diag([2.0, 0.5])
    assert np.isclose(invariant_rn_derivative(g, x), 4.0, atol=1e-12)


def test_rn_derivative_rotation_is_one():
    rng = np.random.default_rng(12)
    for d in [2, 3]:
        q = IntervalPartition.full(d)
        rot = qr_positive(rng.standard_normal((d, d)))[0]
        for _ in range(5):
            x = sample_invariant_flag(q, rng)
            assert np.isclose(invariant_rn_derivative(rot, x), 1.0, atol=1e-10)


def test_rn_derivative_trivial_partition_is_one():
    rng = np.random.default_rng(13)
    q = IntervalPartition.trivial(3)
    x = sample_invariant_flag(q, rng)
    assert invariant_rn_derivative(rng.standard_normal((3, 3)) + 3 * np.eye(3), x) == 1.0


def test_rn_derivative_batch_matches_single():
    rng = np.random.default_rng(14)
    q = IntervalPartition(3, (0, 1, 3))
    g = rng.standard_normal((3, 3))
    frames = sample_invariant_flags(q, 20, rng)
    batch = invariant_rn_derivative_batch(g, frames, q)
    for k in range(20):
        single = invariant_rn_derivative(g, __import__("furstlab.flags", fromlist=["PartialFlagPoint"]).PartialFlagPoint(q, frames[k]))
        assert np.isclose(batch[k], single, rtol=1e-10)


def fd_jacobian(g, frame, q, eps=1e-6):
    """Finite-difference volume Jacobian of the flag action in normal
    coordinates; the closed form must satisfy jac * rn = 1."""
    d = q.d
    lev = [q.level_of(i + 1) for i in range(d)]
    dirs = [(a, b) for a in range(d) for b in range(a + 1, d) if lev[a] != lev[b]]
    y0, _ = qr_positive(g @ frame)
    cols = []
    for (a, b) in dirs:
        gen = np.zeros((d, d))
        gen[a, b] = -1.0
        gen[b, a] = 1.0
        samples = []
        for s in (eps, -eps):
            yq, _ = qr_positive(g @ (frame @ expm(s * gen)))
            skew = 0.5 * (y0.T @ yq - yq.T @ y0)
            samples.append(np.array([skew[bb, aa] for (aa, bb) in dirs]))
        cols.append((samples[0] - samples[1]) / (2 * eps))
    return abs(np.linalg.det(np.column_stack(cols)))


def test_rn_derivative_against_finite_difference_jacobian():
    rng = np.random.default_rng(15)
    cases = [(2, (0, 1, 2)), (3, (0, 1, 2, 3)), (3, (0, 1, 3)), (3, (0, 2, 3))]
    for d, cuts in cases:
        q = IntervalPartition(d, cuts)
        done = 0
        while done < 10:
            g = rng.standard_normal((d, d))
            if abs(np.linalg.det(g)) < 0.1:
                continue
            frame = qr_positive(rng.standard_normal((d, d)))[0]
            x = partial_flag_from_matrix(frame, q)
            rn = invariant_rn_derivative(g, x)
            assert abs(fd_jacobian(g, frame, q) * rn - 1.0) < 1e-4
            done += 1


def test_importance_identity_small_sample():
    # E[phi(g x)] = E[phi(y) rho(y)] with rho evaluated at the preimage flag.
    rng = np.random.default_rng(16)
    q = IntervalPartition.full(2)
    g = np.array([[2.0, 0.3], [0.1, 0.6]])
    n = 200000
    frames = sample_invariant_flags(q, n, rng)
    phi = lambda fr: fr[:, 0, 0] ** 2 + 0.5 * np.sin(3 * fr[:, 1, 0])
    gframes, _ = qr_positive_batch(np.einsum("ij,njk->nik", g, frames))
    lhs = phi(gframes).mean()
    pre, _ = qr_positive_batch(np.einsum("ij,njk->nik", np.linalg.inv(g), frames))
    rhs = (phi(frames) * invariant_rn_derivative_batch(g, pre, q)).mean()
    assert abs(lhs - rhs) / abs(lhs) < 0.02


def test_partial_flag_config_identification_roundtrip():
    rng = np.random.default_rng(17)
    q = IntervalPartition(3, (0, 1, 3))
    tq = filtered_from_partition(q)
    f = partial_flag_from_matrix(rng.standard_normal((3, 3)), q)
    f2 = flag_from_matrix(rng.standard_normal((3, 3)))
    x = partial_flag_to_config(f, f2)
    assert x.topology == tq
    back = config_to_partial_flag(x, q)
    for cut in q.levels:
        assert subspace_distance(back.level(cut), f.level(cut)) < 1e-8
