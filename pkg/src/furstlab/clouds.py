"""Empirical stationary measures on flag and configuration spaces, local
dimension estimators, and conditional fiber measures over one-step projections.

Clouds store one d x d frame per point: the canonical flag frame for a
partition cloud, or the matrix of unit line directions for a configuration
cloud anchored at a stable flag f'.
"""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import trim_mean
from sklearn.neighbors import NearestNeighbors

from .errors import (
    BinsTooSparse,
    DepthInsufficient,
    DimensionMismatch,
    InsufficientScaling,
    NotGeneralPosition,
)
from .flags import FlagPoint, assemble_config, config_from_lines, fiber_chart
from .linalg import qr_positive_batch, subspace_distance_batch
from .topology import AdmissibleTopology, IntervalPartition, one_step
from .walk import MatrixMeasure

DEPTH_DISPLACEMENT_TOL = 1e-9
DEFAULT_RADII = tuple(np.logspace(-3, -1, 8))
MIN_BIN_POINTS = 500

_MAGIC = b"FLGC"
_VERSION = 1
_KIND_PARTITION = 0
_KIND_TOPOLOGY = 1


@dataclass(eq=False)
class PointCloud:
    """Sampled measure on a flag space (kind 'partition') or on a
    configuration fiber X_T^{f'} (kind 'topology')."""

    kind: str  # "partition" | "topology"
    d: int
    points: np.ndarray  # (n, d, d) frames
    partition: IntervalPartition | None = None
    topology: AdmissibleTopology | None = None
    anchor: np.ndarray | None = None  # f' frame for topology clouds
    depth: int = 0
    seed: int | None = None
    measure_hash: str = ""
    _set_frames: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 3 or self.points.shape[0] < 1:
            raise DimensionMismatch("cloud needs at least one (d, d) point")
        if self.kind == "partition" and self.partition is None:
            raise ValueError("partition cloud needs a partition")
        if self.kind == "topology" and (self.topology is None or self.anchor is None):
            raise ValueError("topology cloud needs a topology and an anchor flag")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    # -- metric ------------------------------------------------------------

    def _level_sets(self):
        """Index lists defining the summed Grassmannian distance."""
        if self.kind == "partition":
            return [list(range(q)) for q in self.partition.levels]
        sets = [
            sorted(iset)
            for iset in self.topology.open_sets()
            if len(iset) < self.d
        ]
        return [[i - 1 for i in iset] for iset in sets]

    def _frames_for(self, cols: tuple) -> np.ndarray:
        """Orthonormal frames (n, d, k) spanning the given point columns."""
        key = tuple(cols)
        if key not in self._set_frames:
            sub = self.points[:, :, list(cols)]
            if self.kind == "partition":
                self._set_frames[key] = np.ascontiguousarray(sub)
            else:
                q, _ = qr_positive_batch(sub)
                self._set_frames[key] = q
        return self._set_frames[key]

    def distances_from(self, idx: int, level_sets=None) -> np.ndarray:
        """Summed Grassmannian distance from point idx to every point."""
        if level_sets is None:
            level_sets = self._level_sets()
        total = np.zeros(self.n)
        for cols in level_sets:
            frames = self._frames_for(tuple(cols))
            total += subspace_distance_batch(frames[idx], frames)
        return total

    def chordal_embedding(self) -> np.ndarray:
        """Euclidean embedding by stacked projector matrices, locally
        bilipschitz to the summed-angle metric (used by the k-NN estimator)."""
        blocks = []
        for cols in self._level_sets():
            frames = self._frames_for(tuple(cols))
            projs = np.einsum("nik,njk->nij", frames, frames)
            blocks.append(projs.reshape(self.n, -1) / math.sqrt(2.0))
        return np.concatenate(blocks, axis=1)

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        kind = _KIND_PARTITION if self.kind == "partition" else _KIND_TOPOLOGY
        buf.write(_MAGIC)
        buf.write(struct.pack("<HHB", _VERSION, self.d, kind))
        if self.kind == "partition":
            cuts = self.partition.cuts
            buf.write(struct.pack("<H", len(cuts)))
            buf.write(struct.pack(f"<{len(cuts)}H", *cuts))
        else:
            blob = self.topology.to_json().encode()
            buf.write(struct.pack("<I", len(blob)))
            buf.write(blob)
            buf.write(self.anchor.astype("<f8").tobytes())
        buf.write(struct.pack("<Q", self.n))
        buf.write(self.points.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "PointCloud":
        buf = io.BytesIO(data)
        if buf.read(4) != _MAGIC:
            raise ValueError("bad cloud magic")
        version, d, kind = struct.unpack("<HHB", buf.read(5))
        if version != _VERSION:
            raise ValueError(f"unsupported cloud version {version}")
        partition = topology = anchor = None
        if kind == _KIND_PARTITION:
            (ncuts,) = struct.unpack("<H", buf.read(2))
            cuts = struct.unpack(f"<{ncuts}H", buf.read(2 * ncuts))
            partition = IntervalPartition(d, cuts)
            kind_name = "partition"
        else:
            (blen,) = struct.unpack("<I", buf.read(4))
            topology = AdmissibleTopology.from_json(buf.read(blen).decode())
            anchor = np.frombuffer(buf.read(8 * d * d), dtype="<f8").reshape(d, d).copy()
            kind_name = "topology"
        (count,) = struct.unpack("<Q", buf.read(8))
        pts = np.frombuffer(buf.read(8 * count * d * d), dtype="<f8")
        pts = pts.reshape(count, d, d).copy()
        return cls(
            kind=kind_name, d=d, points=pts, partition=partition,
            topology=topology, anchor=anchor,
        )

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PointCloud":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path):
        np.savetxt(path, self.points.reshape(self.n, -1), delimiter=",")


@dataclass(frozen=True)
class DimensionEstimate:
    """Local dimension with a 95% half-width and the scaling range used."""

    delta: float
    ci: float
    r_range: tuple
    method: str

    def __post_init__(self):
        if self.delta < -0.5:
            raise ValueError("dimension estimate implausibly negative")


def _measure_hash(mu: MatrixMeasure) -> str:
    return hashlib.sha256(mu.to_json().encode()).hexdigest()[:16]


def _fold_flags(mu, n, depth, rng, seed_frames=None):
    d = mu.d
    frames = np.tile(np.eye(d), (n, 1, 1)) if seed_frames is None else seed_frames
    draws = [mu.sample_batch(n, rng) for _ in range(depth)]
    for gs in reversed(draws):
        frames, _ = qr_positive_batch(gs @ frames)
    return frames


def _flag_displacement(a, b, levels):
    total = np.zeros(a.shape[0])
    for q in levels:
        fa, fb = a[:, :, :q], b[:, :, :q]
        prods = np.einsum("nji,njl->nil", fa, fb)
        cos = np.linalg.svd(prods, compute_uv=False)
        residual = fb - np.einsum("njk,nkl->njl", fa, prods)
        sin = np.linalg.svd(residual, compute_uv=False)[:, ::-1]
        angles = np.where(
            cos > 0.7,
            np.arcsin(np.clip(sin, 0.0, 1.0)),
            np.arccos(np.clip(cos, 0.0, 1.0)),
        )
        total += np.linalg.norm(angles, axis=-1)
    return total


def sample_stationary_cloud(
    mu: MatrixMeasure,
    q: IntervalPartition,
    n_points: int,
    depth: int,
    seed: int,
) -> PointCloud:
    """Approximate i.i.d. samples of the stationary measure on the partial flag
    space: flags of backward products of length depth.

    Depth adequacy is checked on a small independent probe: doubling the depth
    must move each probe point by less than 1e-9 in the flag metric.
    """
    ss = np.random.SeedSequence(seed)
    probe_ss, main_ss = ss.spawn(2)
    n_probe = max(10, n_points // 100)
    rng_probe = np.random.default_rng(probe_ss)
    inner = _fold_flags(mu, n_probe, depth, rng_probe)
    # Shared outer words applied to both seeds isolate the depth effect.
    rng_outer_state = np.random.default_rng(probe_ss.spawn(1)[0])
    outer = [mu.sample_batch(n_probe, rng_outer_state) for _ in range(depth)]
    shallow = np.tile(np.eye(mu.d), (n_probe, 1, 1))
    deep = inner
    for gs in reversed(outer):
        shallow, _ = qr_positive_batch(gs @ shallow)
        deep, _ = qr_positive_batch(gs @ deep)
    levels = q.levels if q.levels else (mu.d - 1,)
    disp = float(np.max(_flag_displacement(shallow, deep, levels)))
    if disp > DEPTH_DISPLACEMENT_TOL:
        raise DepthInsufficient(
            f"doubling depth {depth} moves probe points by {disp:.3e}",
            displacement=disp,
        )
    rng = np.random.default_rng(main_ss)
    frames = _fold_flags(mu, n_points, depth, rng)
    return PointCloud(
        kind="partition", d=mu.d, points=frames, partition=q,
        depth=depth, seed=seed, measure_hash=_measure_hash(mu),
    )


def sample_config_cloud(
    mu: MatrixMeasure,
    t: AdmissibleTopology,
    n_points: int,
    depth: int,
    seed: int,
    anchor_seed: int | None = None,
) -> PointCloud:
    """Samples of the fiber measure on X_T^{f'}: unstable flags paired with one
    fixed stable anchor flag f', stored as line matrices."""
    from .walk import stable_flag_from_sequence

    ss = np.random.SeedSequence(seed if anchor_seed is None else anchor_seed)
    rng_anchor = np.random.default_rng(ss.spawn(1)[0])
    fwd = list(mu.sample_batch(4 * depth, rng_anchor))
    fprime = stable_flag_from_sequence(fwd)
    base = sample_stationary_cloud(
        mu, IntervalPartition.full(mu.d), n_points, depth, seed
    )
    lines = _lines_batch(base.points, fprime.frame)
    return PointCloud(
        kind="topology", d=mu.d, points=lines, topology=t,
        anchor=fprime.frame, depth=depth, seed=seed,
        measure_hash=_measure_hash(mu),
    )


def _lines_batch(flag_frames: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Unit directions l_i = U_i cap U'_{d-i+1} for a stack of flags against
    one anchor, via nullspaces of stacked complement projectors."""
    n, d, _ = flag_frames.shape
    lines = np.empty((n, d, d))
    eye = np.eye(d)
    for i in range(1, d + 1):
        pu = np.einsum("nik,njk->nij", flag_frames[:, :, :i], flag_frames[:, :, :i])
        a2 = anchor[:, : d - i + 1]
        pv = a2 @ a2.T
        stacked = np.concatenate([eye - pu, np.tile(eye - pv, (n, 1, 1))], axis=1)
        _, sv, vt = np.linalg.svd(stacked)
        if np.any(sv[:, -1] > 1e-6):
            raise NotGeneralPosition(
                "flag pair nearly degenerate while extracting lines"
            )
        lines[:, :, i - 1] = vt[:, -1, :]
    return lines


def _center_regression(log_r, log_mass):
    slope, intercept = np.polyfit(log_r, log_mass, 1)
    pred = slope * log_r + intercept
    ss_res = np.sum((log_mass - pred) ** 2)
    ss_tot = np.sum((log_mass - np.mean(log_mass)) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return slope, r2


def local_dimension(
    cloud: PointCloud,
    radii=DEFAULT_RADII,
    n_centers: int = 200,
    seed: int = 0,
    distances=None,
) -> DimensionEstimate:
    """Regression estimate of the local dimension: slope of log empirical mass
    of balls against log radius, trimmed-averaged over random centers.

    `distances` optionally supplies a callable idx -> distance vector to
    override the cloud metric (used for synthetic oracles).
    """
    radii = np.asarray(sorted(radii), dtype=float)
    if len(radii) < 5:
        raise ValueError("need at least 5 radii")
    rng = np.random.default_rng(seed)
    n = cloud.n
    centers = rng.choice(n, size=min(n_centers, n), replace=False)
    get_dists = distances if distances is not None else cloud.distances_from
    slopes = []
    r2s = []
    log_r = np.log(radii)
    for idx in centers:
        dvec = get_dists(int(idx))
        if np.all(dvec <= radii[0]):
            # All mass inside the smallest ball: locally zero-dimensional.
            slopes.append(0.0)
            r2s.append(1.0)
            continue
        counts = np.searchsorted(np.sort(dvec), radii, side="right")
        mask = counts > 1
        if np.sum(mask) < 5:
            continue
        slope, r2 = _center_regression(log_r[mask], np.log(counts[mask] / n))
        slopes.append(slope)
        r2s.append(r2)
    if not slopes:
        # Fully degenerate cloud: every ball carries all the mass.
        return DimensionEstimate(0.0, 1e-6, (radii[0], radii[-1]), "local-regression")
    slopes = np.array(slopes)
    if float(np.median(r2s)) < 0.9:
        raise InsufficientScaling(
            f"median regression R^2 {np.median(r2s):.3f} below 0.9"
        )
    delta = float(trim_mean(slopes, 0.1))
    boot = rng.choice(slopes, size=(400, len(slopes)), replace=True)
    boot_means = trim_mean(boot, 0.1, axis=1)
    lo, hi = np.percentile(boot_means, [2.5, 97.5])
    ci = max(float(hi - lo) / 2.0, 1e-6)
    return DimensionEstimate(
        max(delta, 0.0), ci, (float(radii[0]), float(radii[-1])), "local-regression"
    )


def knn_dimension(
    cloud: PointCloud, k: int = 10, seed: int = 0, embedding=None
) -> DimensionEstimate:
    """Maximum-likelihood nearest-neighbor dimension (harmonic average of log
    neighbor-distance ratios) in a locally bilipschitz Euclidean embedding."""
    if k < 5:
        raise ValueError("need k >= 5")
    emb = cloud.chordal_embedding() if embedding is None else embedding
    nn = NearestNeighbors(n_neighbors=k + 1).fit(emb)
    dists, _ = nn.kneighbors(emb)
    dists = dists[:, 1:]  # drop the point itself
    ok = dists[:, -1] > 1e-12
    if not np.any(ok):
        return DimensionEstimate(0.0, 1e-6, (0.0, 0.0), "knn-mle")
    ratios = np.log(dists[ok, -1][:, None] / dists[ok, :-1])
    inv = np.mean(ratios)
    delta = 1.0 / inv if inv > 0 else 0.0
    # Spread over 5 disjoint subsamples for the half-width.
    rng = np.random.default_rng(seed)
    perm = rng.permutation(np.where(ok)[0])
    parts = np.array_split(perm, 5)
    subs = []
    for part in parts:
        if len(part) < k:
            continue
        r = np.log(dists[part, -1][:, None] / dists[part, :-1])
        m = np.mean(r)
        subs.append(1.0 / m if m > 0 else 0.0)
    ci = 1.96 * float(np.std(subs, ddof=1)) / math.sqrt(len(subs)) if len(subs) > 1 else 1e-3
    rmed = float(np.median(dists[ok, -1]))
    return DimensionEstimate(float(delta), max(ci, 1e-6), (0.0, rmed), "knn-mle")


def condition_on_projection(
    cloud: PointCloud,
    t: AdmissibleTopology,
    t2: AdmissibleTopology,
    bin_radius: float,
    seed: int = 0,
    radii=DEFAULT_RADII,
    min_bin: int = MIN_BIN_POINTS,
    max_bins: int = 20,
):
    """Disintegrate a configuration cloud over a one-step projection.

    Bins the cloud by its image configuration on the coarser topology, maps
    each large bin through the fiber-chart coordinate (1-dimensional), and
    estimates the fiber dimension per bin.  Returns a list of
    (center index, u-coordinates, DimensionEstimate).
    """
    arrow = one_step(t, t2)
    if arrow is None or cloud.kind != "topology" or cloud.topology != t:
        raise ValueError("need a configuration cloud on the finer topology of a one-step pair")
    base_sets = [
        [i - 1 for i in sorted(iset)]
        for iset in t2.open_sets()
        if len(iset) < t.d
    ]
    rng = np.random.default_rng(seed)
    order = rng.permutation(cloud.n)
    assigned = np.full(cloud.n, -1)
    centers = []
    if base_sets:
        for idx in order:
            if assigned[idx] >= 0:
                continue
            dvec = cloud.distances_from(int(idx), level_sets=base_sets)
            members = (dvec < bin_radius) & (assigned < 0)
            assigned[members] = len(centers)
            centers.append(int(idx))
            if len(centers) >= max_bins:
                # Points outside the first max_bins balls stay unassigned;
                # pooled estimates weight the dense part of the base measure.
                break
    else:
        # Coarsest topology: a single fiber containing everything.
        assigned[:] = 0
        centers.append(int(order[0]))
    results = []
    for b, center in enumerate(centers):
        member_idx = np.where(assigned == b)[0]
        if len(member_idx) < min_bin:
            continue
        center_cfg = config_from_lines(t, cloud.points[center])
        chart = fiber_chart(center_cfg, t, t2)
        us = _chart_coordinates_batch(chart, cloud.points[member_idx], t)
        est = _dimension_1d(us, radii, seed=seed + b)
        results.append((center, us, est))
    if not results:
        raise BinsTooSparse(
            f"no bin reached {min_bin} points at bin_radius {bin_radius}"
        )
    return results


def _chart_coordinates_batch(chart, lines_batch, t):
    """Chart coordinate u for each line-matrix point of one fiber."""
    i, _ = chart.arrow
    cols = [k - 1 for k in sorted(t.atom(i))]
    frames, _ = qr_positive_batch(lines_batch[:, :, cols])
    d = lines_batch.shape[1]
    proj = np.eye(d) - chart._b.projector()
    reduced = np.einsum("ij,njk->nik", proj, frames)
    u_mat, _, _ = np.linalg.svd(reduced, full_matrices=False)
    vecs = u_mat[:, :, 0]
    basis = np.column_stack([chart._xvec, chart._yvec])
    coords, *_ = np.linalg.lstsq(basis, vecs.T, rcond=None)
    us = np.arctan2(coords[1], coords[0])
    us = np.where(us > math.pi / 2, us - math.pi, us)
    us = np.where(us < -math.pi / 2, us + math.pi, us)
    return us


def _dimension_1d(us: np.ndarray, radii, seed: int) -> DimensionEstimate:
    """Local dimension of a 1-d sample in the chart coordinate."""
    us = np.asarray(us, dtype=float)
    spread = float(np.max(us) - np.min(us)) if len(us) else 0.0
    if spread < 1e-9:
        return DimensionEstimate(0.0, 1e-6, (0.0, 0.0), "fiber-chart-1d")

    def dist_from(idx):
        return np.abs(us - us[idx])

    cloud_like = _ArrayCloud(us)
    return local_dimension(
        cloud_like, radii=radii, n_centers=min(100, len(us)), seed=seed,
        distances=dist_from,
    )


class _ArrayCloud:
    """Minimal stand-in exposing .n for local_dimension with an override metric."""

    def __init__(self, values):
        self.values = np.asarray(values)
        self.n = len(self.values)

    def distances_from(self, idx):
        return np.abs(self.values - self.values[idx])
