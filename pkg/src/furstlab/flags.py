"""Flags, partial flags, configuration spaces, fiber charts and the
rotation-invariant reference measure on flag spaces.

A complete flag is stored as a canonical d x d orthogonal frame whose first i
columns span the i-th level.  A configuration on an admissible topology T maps
every nonempty open set I of T to an |I|-dimensional subspace, compatible with
unions (sums) and intersections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateAngle,
    DimensionMismatch,
    NotComparable,
    NotGeneralPosition,
    NotSameFiber,
    TopologyMismatch,
)
from .linalg import (
    Subspace,
    qr_positive,
    restricted_det,
    subspace_distance,
    subspace_intersect,
)
from .topology import AdmissibleTopology, IntervalPartition, filtered_from_partition, is_finer, one_step

GENERAL_POSITION_MARGIN = 1e-7


@dataclass(frozen=True, eq=False)
class FlagPoint:
    """Complete flag of R^d, canonical orthogonal frame."""

    frame: np.ndarray

    def __post_init__(self):
        frame = np.asarray(self.frame, dtype=float)
        object.__setattr__(self, "frame", frame)
        frame.setflags(write=False)
        d = frame.shape[0]
        if frame.shape != (d, d) or not np.allclose(
            frame.T @ frame, np.eye(d), atol=1e-10
        ):
            raise DimensionMismatch("flag frame must be orthogonal d x d")

    @property
    def d(self) -> int:
        return self.frame.shape[0]

    def level(self, i: int) -> Subspace:
        return Subspace(self.frame[:, :i])

    def reversed(self) -> "FlagPoint":
        """Flag whose level i is spanned by the last i columns, re-canonicalized."""
        return flag_from_matrix(self.frame[:, ::-1])


@dataclass(frozen=True, eq=False)
class PartialFlagPoint:
    """Partial flag for an interval partition Q, stored cumulatively."""

    partition: IntervalPartition
    frame: np.ndarray  # d x d orthonormal; first q_l columns span U_{q_l}

    def __post_init__(self):
        frame = np.asarray(self.frame, dtype=float)
        object.__setattr__(self, "frame", frame)
        frame.setflags(write=False)
        d = self.partition.d
        if frame.shape != (d, d) or not np.allclose(
            frame.T @ frame, np.eye(d), atol=1e-10
        ):
            raise DimensionMismatch("partial flag frame must be orthonormal d x d")

    @property
    def d(self) -> int:
        return self.partition.d

    def level(self, q: int) -> Subspace:
        return Subspace(self.frame[:, :q])

    def levels(self):
        return [self.level(q) for q in self.partition.levels]


def flag_from_matrix(m: np.ndarray) -> FlagPoint:
    """Canonical flag of the column spans of a nonsingular matrix."""
    q, _ = qr_positive(np.asarray(m, dtype=float))
    return FlagPoint(q)


def partial_flag_from_matrix(m: np.ndarray, q: IntervalPartition) -> PartialFlagPoint:
    frame, _ = qr_positive(np.asarray(m, dtype=float))
    return PartialFlagPoint(q, frame)


def flag_distance(f: FlagPoint, f2: FlagPoint) -> float:
    """Sum of Grassmannian distances over all proper levels."""
    return sum(
        subspace_distance(f.level(i), f2.level(i)) for i in range(1, f.d)
    )


def partial_flag_distance(f: PartialFlagPoint, f2: PartialFlagPoint) -> float:
    if f.partition != f2.partition:
        raise DimensionMismatch("partial flags on different partitions")
    return sum(
        subspace_distance(f.level(q), f2.level(q)) for q in f.partition.levels
    )


def general_position(f: FlagPoint, f2: FlagPoint, margin: float = GENERAL_POSITION_MARGIN):
    """Transversality U_j + U'_{d-j} = R^d for 0 < j < d.

    Returns (ok, m) where m is the minimum over j of the sine of the smallest
    principal angle between U_j and U'_{d-j}.
    """
    if f.d != f2.d:
        raise DimensionMismatch("flags in different dimensions")
    d = f.d
    worst = 1.0
    for j in range(1, d):
        prod = f.frame[:, :j].T @ f2.frame[:, : d - j]
        if prod.size == 0:
            continue
        smax = np.linalg.svd(prod, compute_uv=False)[0]
        worst = min(worst, math.sqrt(max(0.0, 1.0 - min(smax, 1.0) ** 2)))
    return worst >= margin, worst


@dataclass(frozen=True, eq=False)
class Configuration:
    """Point of the configuration space X_T: one subspace per open set of T."""

    topology: AdmissibleTopology
    spaces: dict  # frozenset -> Subspace, keys = nonempty open sets of T
    lines: np.ndarray | None = None  # optional d x d line matrix (column i spans l_i)

    def __post_init__(self):
        for iset, sub in self.spaces.items():
            if sub.k != len(iset):
                raise DimensionMismatch(
                    f"space for {set(iset)} has dimension {sub.k}, expected {len(iset)}"
                )

    @property
    def d(self) -> int:
        return self.topology.d

    def space(self, iset) -> Subspace:
        return self.spaces[frozenset(iset)]

    def atom_space(self, i: int) -> Subspace:
        return self.spaces[self.topology.atom(i)]

    def validate(self, tol: float = 1e-8) -> float:
        """Worst violation of the union/intersection lattice identities."""
        worst = 0.0
        keys = list(self.spaces)
        for a in keys:
            for b in keys:
                u = a | b
                su = _sum_subspaces(self.spaces[a], self.spaces[b], len(u))
                worst = max(worst, subspace_distance(su, self.spaces[u]))
                c = a & b
                if c:
                    si = subspace_intersect(self.spaces[a], self.spaces[b])
                    if si.k != len(c):
                        return float("inf")
                    worst = max(worst, subspace_distance(si, self.spaces[c]))
        return worst


def _sum_subspaces(s: Subspace, s2: Subspace, dim: int) -> Subspace:
    stacked = np.column_stack([s.frame, s2.frame])
    u, sv, _ = np.linalg.svd(stacked, full_matrices=False)
    if len(sv) < dim or (len(sv) > dim and sv[dim] > 1e-6):
        raise DimensionMismatch("subspace sum has unexpected dimension")
    return Subspace(u[:, :dim])


def config_from_lines(t: AdmissibleTopology, lines: np.ndarray) -> Configuration:
    """Configuration x_I = span{l_i : i in I} from d independent line directions."""
    lines = np.asarray(lines, dtype=float)
    lines = lines / np.linalg.norm(lines, axis=0, keepdims=True)
    spaces = {}
    for iset in t.open_sets():
        cols = lines[:, [i - 1 for i in sorted(iset)]]
        u, sv, _ = np.linalg.svd(cols, full_matrices=False)
        if sv[-1] < 1e-10:
            raise NotGeneralPosition("line directions are numerically dependent")
        spaces[iset] = Subspace(u)
    return Configuration(t, spaces, lines=lines)


def transversal_lines(f: FlagPoint, f2: FlagPoint) -> np.ndarray:
    """Unit directions l_i = U_i(f) cap U'_{d-i+1}(f2), as columns of a d x d matrix."""
    ok, margin = general_position(f, f2)
    if not ok:
        raise NotGeneralPosition(f"flag pair margin {margin:.2e} below threshold")
    d = f.d
    lines = np.empty((d, d))
    for i in range(1, d + 1):
        inter = subspace_intersect(f.level(i), f2.level(d - i + 1), tol=1e-6)
        if inter.k != 1:
            raise NotGeneralPosition(f"intersection at level {i} has dimension {inter.k}")
        lines[:, i - 1] = inter.frame[:, 0]
    return lines


def assemble_config(
    t: AdmissibleTopology, f: FlagPoint, f2: FlagPoint
) -> Configuration:
    """F_T(f, f'): the configuration with x_I = sum of U_i(f) cap U'_{d-i+1}(f')."""
    return config_from_lines(t, transversal_lines(f, f2))


def project_config(
    t: AdmissibleTopology, t2: AdmissibleTopology, x: Configuration
) -> Configuration:
    """Restriction of x to the open sets of the coarser topology t2."""
    if x.topology != t:
        raise TopologyMismatch("configuration not indexed by the finer topology")
    if not is_finer(t, t2):
        raise NotComparable("projection requires the first topology to be finer")
    spaces = {iset: x.spaces[iset] for iset in t2.open_sets()}
    return Configuration(t2, spaces, lines=x.lines)


def config_distance(x: Configuration, y: Configuration) -> float:
    """Sum of Grassmannian distances over the open sets of the shared topology."""
    if x.topology != y.topology:
        raise TopologyMismatch("configurations on different topologies")
    return sum(
        subspace_distance(x.spaces[iset], y.spaces[iset]) for iset in x.spaces
    )


def _fiber_plane(x: Configuration, i: int, j: int):
    """Anchor data of the one-step fiber through x at arrow (i, j).

    Returns (b, w2, xvec, yvec, theta): the fixed codimension-2 space b inside
    x_{T'(i)}, an orthonormal frame of its 2-dimensional complement, the unit
    reductions of x_{T(i)} and x_{T'(i) minus i}, and their angle.
    """
    t = x.topology
    big = t.atom(i) | {j}  # T'(i)
    small_no_i = frozenset(big - {i})
    b_set = frozenset(big - {i, j})
    a_frame = _open_space(x, big).frame
    b = _open_space(x, b_set) if b_set else Subspace(np.zeros((x.d, 0)))
    proj = np.eye(x.d) - b.projector()
    w_raw = proj @ a_frame
    u, sv, _ = np.linalg.svd(w_raw, full_matrices=False)
    w2 = u[:, :2]
    yvec = _reduce_to_plane(_open_space(x, small_no_i), proj, w2)
    xvec = _reduce_to_plane(x.atom_space(i), proj, w2)
    cos = float(np.dot(xvec, yvec))
    if cos < 0:
        xvec = -xvec
        cos = -cos
    theta = math.acos(min(cos, 1.0))
    return b, w2, xvec, yvec, theta


def _open_space(x: Configuration, iset) -> Subspace:
    iset = frozenset(iset)
    if iset in x.spaces:
        return x.spaces[iset]
    # Open set of a coarser topology: union of atoms of x's topology.
    frames = [x.atom_space(i).frame for i in sorted(iset)]
    stacked = np.column_stack(frames)
    u, sv, _ = np.linalg.svd(stacked, full_matrices=False)
    return Subspace(u[:, : len(iset)])


def _reduce_to_plane(s: Subspace, proj: np.ndarray, w2: np.ndarray) -> np.ndarray:
    reduced = proj @ s.frame
    u, sv, _ = np.linalg.svd(reduced, full_matrices=False)
    v = u[:, 0]
    # Express within the plane and renormalize there.
    coords = w2.T @ v
    coords = coords / np.linalg.norm(coords)
    return w2 @ coords


@dataclass
class FiberChart:
    """Chart u -> configuration over the one-step fiber through a base point.

    The chart is defined on the open interval (-pi/2, pi/2); the deleted
    configuration at the boundary is never evaluated.
    """

    base: Configuration
    arrow: tuple  # (i, j)
    theta: float
    _b: Subspace = field(repr=False)
    _xvec: np.ndarray = field(repr=False)
    _yvec: np.ndarray = field(repr=False)

    def __call__(self, u: float) -> Configuration:
        if not -math.pi / 2 < u < math.pi / 2:
            raise ValueError("chart parameter must lie in (-pi/2, pi/2)")
        i, _ = self.arrow
        t = self.base.topology
        w = math.cos(u) * self._xvec + math.sin(u) * self._yvec
        z_frame = np.column_stack([self._b.frame, w / np.linalg.norm(w)])
        zq, _ = qr_positive(z_frame, allow_rectangular=True)
        z_atom = Subspace(zq)
        spaces = {}
        for iset, sub in self.base.spaces.items():
            if i not in iset:
                spaces[iset] = sub
                continue
            rest = frozenset().union(
                *[t.atom(k) for k in iset if k != i]
            ) if len(iset) > 1 else frozenset()
            if rest:
                stacked = np.column_stack([self.base.spaces[rest].frame, z_atom.frame])
                uu, sv, _ = np.linalg.svd(stacked, full_matrices=False)
                spaces[iset] = Subspace(uu[:, : len(iset)])
            else:
                spaces[iset] = z_atom
        return Configuration(t, spaces)

    def derivative(self, u: float) -> float:
        """|d phi(u)| = |sin theta| / (1 + sin(2u) cos theta) in the fiber metric."""
        return abs(math.sin(self.theta)) / (
            1.0 + math.sin(2.0 * u) * math.cos(self.theta)
        )

    def coordinate(self, y: Configuration) -> float:
        """Inverse chart: parameter u with self(u) in the same atom space as y."""
        i, _ = self.arrow
        b, w2, xv, yv, _ = _fiber_plane(self.base, *self.arrow)
        proj = np.eye(self.base.d) - b.projector()
        v = _reduce_to_plane(y.atom_space(i), proj, w2)
        # Solve v ~ cos u * xvec + sin u * yvec in the plane spanned by them.
        basis = np.column_stack([self._xvec, self._yvec])
        coords, *_ = np.linalg.lstsq(basis, v, rcond=None)
        u = math.atan2(coords[1], coords[0])
        if u > math.pi / 2:
            u -= math.pi
        elif u < -math.pi / 2:
            u += math.pi
        return u


def fiber_chart(
    x: Configuration, t: AdmissibleTopology, t2: AdmissibleTopology
) -> FiberChart:
    """Chart of Lemma-style bilipschitz type over the one-step fiber through x."""
    arrow = one_step(t, t2)
    if arrow is None:
        raise NotComparable("fiber_chart requires a one-step pair of topologies")
    if x.topology != t:
        raise TopologyMismatch("configuration not on the finer topology")
    b, w2, xvec, yvec, theta = _fiber_plane(x, *arrow)
    if theta < 1e-8:
        raise DegenerateAngle(f"anchor angle {theta:.2e} below 1e-8")
    return FiberChart(base=x, arrow=arrow, theta=theta, _b=b, _xvec=xvec, _yvec=yvec)


def fiber_metric(
    x1: Configuration,
    x2: Configuration,
    t: AdmissibleTopology,
    t2: AdmissibleTopology,
    base_tol: float = 1e-6,
) -> float:
    """Distance at the changed atom for two configurations in one fiber."""
    arrow = one_step(t, t2)
    if arrow is None:
        raise NotComparable("fiber_metric requires a one-step pair of topologies")
    p1 = project_config(t, t2, x1)
    p2 = project_config(t, t2, x2)
    if config_distance(p1, p2) > base_tol:
        raise NotSameFiber("configurations do not share a base point")
    i, _ = arrow
    return subspace_distance(x1.atom_space(i), x2.atom_space(i))


def sample_invariant_flag(
    q: IntervalPartition, rng: np.random.Generator
) -> PartialFlagPoint:
    """Orthogonally invariant random partial flag (flag of a Gaussian matrix)."""
    m = rng.standard_normal((q.d, q.d))
    return partial_flag_from_matrix(m, q)


def invariant_rn_derivative(g: np.ndarray, x: PartialFlagPoint) -> float:
    """Jacobian d(g eta)/d eta at gx for the rotation-invariant measure eta on F_Q.

    Closed form: product over interior levels q_j of
    |det restricted to U_{q_j}(x)|^(q_{j+1} - q_{j-1}), divided by
    |det g|^(q_{k-1}).  For a full flag this is the product of the squared
    level Jacobians over |det g|^(d-1).
    """
    g = np.asarray(g, dtype=float)
    cuts = x.partition.cuts
    k = len(cuts) - 1
    if k == 1:
        return 1.0  # trivial partition: one-point space
    log_val = 0.0
    for j in range(1, k):
        exponent = cuts[j + 1] - cuts[j - 1]
        log_val += exponent * math.log(restricted_det(g, x.level(cuts[j])))
    log_val -= cuts[k - 1] * math.log(abs(np.linalg.det(g)))
    return math.exp(log_val)


def sample_invariant_flags(
    q: IntervalPartition, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Stack of n orthogonally invariant flag frames (n, d, d)."""
    from .linalg import qr_positive_batch

    frames, _ = qr_positive_batch(rng.standard_normal((n, q.d, q.d)))
    return frames


def invariant_rn_derivative_batch(
    g: np.ndarray, frames: np.ndarray, q: IntervalPartition
) -> np.ndarray:
    """invariant_rn_derivative over a stack of partial flag frames."""
    g = np.asarray(g, dtype=float)
    cuts = q.cuts
    k = len(cuts) - 1
    n = frames.shape[0]
    if k == 1:
        return np.ones(n)
    log_val = np.zeros(n)
    for j in range(1, k):
        sub = g @ frames[:, :, : cuts[j]]
        grams = np.einsum("nik,nil->nkl", sub, sub)
        _, logdet = np.linalg.slogdet(grams)
        log_val += (cuts[j + 1] - cuts[j - 1]) * 0.5 * logdet
    log_val -= cuts[k - 1] * math.log(abs(np.linalg.det(g)))
    return np.exp(log_val)


def config_to_partial_flag(x: Configuration, q: IntervalPartition) -> PartialFlagPoint:
    """Identify a configuration on the filtered topology T_Q with a partial flag."""
    d = x.d
    frame = np.eye(d)
    cols = []
    prev = Subspace(np.zeros((d, 0)))
    for cut in q.cuts[1:]:
        prefix = frozenset(range(1, cut + 1))
        space = _open_space(x, prefix)
        proj = np.eye(d) - prev.projector()
        new = proj @ space.frame
        u, sv, _ = np.linalg.svd(new, full_matrices=False)
        cols.append(u[:, : cut - prev.k])
        prev = space
    frame = np.column_stack(cols)
    frame, _ = qr_positive(frame)
    return PartialFlagPoint(q, frame)


def partial_flag_to_config(
    f: PartialFlagPoint, f2: FlagPoint
) -> Configuration:
    """Inverse identification: configuration F_{T_Q}(f~, f') for any complete
    flag f~ refining f in general position with f'."""
    q = f.partition
    d = f.d
    # Refine f into a complete flag using the stable flag's lines to stay
    # within the fiber identification.
    tq = filtered_from_partition(q)
    full = flag_from_matrix(f.frame)
    return assemble_config(tq, full, f2)
