"""Random products of SL_d matrices: measures with optional rotation noise,
Lyapunov spectra by QR deflation, limit (unstable/stable) flags, the
Furstenberg-Kesten partial-sum cross-check, configuration extension and the
exponential convergence-rate probe.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import (
    DimensionMismatch,
    NotComparable,
    NotConverged,
    SpectrumNotSimple,
)
from .flags import (
    Configuration,
    FlagPoint,
    assemble_config,
    config_distance,
    config_from_lines,
    flag_distance,
    flag_from_matrix,
    general_position,
    _open_space,
)
from .linalg import Subspace, qr_positive, qr_positive_batch, restricted_det
from .topology import AdmissibleTopology, is_finer, removed_pairs

HAAR_MIX_WEIGHT = 1e-3


@dataclass(frozen=True)
class MollifierSpec:
    """Rotation noise: Gaussian on so(d) with std epsilon/3, truncated at
    norm epsilon.  In full-support mode a small Haar component is mixed in."""

    epsilon: float
    kind: str = "so_ball"
    full_support: bool = False

    def sample(self, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
        rots = _so_ball_rotations(d, n, self.epsilon, rng)
        if self.full_support:
            mask = rng.random(n) < HAAR_MIX_WEIGHT
            if np.any(mask):
                rots[mask] = _haar_rotations(d, int(mask.sum()), rng)
        return rots

    def to_json_obj(self):
        obj = {"kind": self.kind, "epsilon": self.epsilon}
        if self.full_support:
            obj["full_support"] = True
        return obj


def _so_ball_rotations(d, n, eps, rng):
    """Rotations exp(A), A Gaussian on so(d) with std eps/3, |A| <= eps."""
    n_gen = d * (d - 1) // 2
    coeffs = rng.standard_normal((n, n_gen)) * (eps / 3.0)
    norms = np.linalg.norm(coeffs, axis=1)
    bad = norms > eps
    while np.any(bad):
        coeffs[bad] = rng.standard_normal((int(bad.sum()), n_gen)) * (eps / 3.0)
        norms = np.linalg.norm(coeffs, axis=1)
        bad = norms > eps
    if d == 2:
        c, s = np.cos(coeffs[:, 0]), np.sin(coeffs[:, 0])
        out = np.empty((n, 2, 2))
        out[:, 0, 0] = c
        out[:, 0, 1] = -s
        out[:, 1, 0] = s
        out[:, 1, 1] = c
        return out
    skews = np.zeros((n, d, d))
    iu = np.triu_indices(d, 1)
    skews[:, iu[0], iu[1]] = coeffs
    skews[:, iu[1], iu[0]] = -coeffs
    if d == 3:
        return _rodrigues(skews)
    return np.stack([expm(a) for a in skews])


def _rodrigues(skews):
    """exp of a batch of 3x3 skew matrices in closed form."""
    thetas = np.sqrt(0.5 * np.einsum("nij,nij->n", skews, skews))
    out = np.tile(np.eye(3), (len(skews), 1, 1))
    nz = thetas > 1e-12
    th = thetas[nz][:, None, None]
    a = skews[nz] / th
    out[nz] += np.sin(th) * a + (1.0 - np.cos(th)) * (a @ a)
    return out


def _haar_rotations(d, n, rng):
    q, _ = qr_positive_batch(rng.standard_normal((n, d, d)))
    dets = np.linalg.det(q)
    flip = dets < 0
    q[flip] = q[flip][:, :, list(range(d - 2)) + [d - 1, d - 2]] if d > 1 else q[flip]
    return q


@dataclass(frozen=True, eq=False)
class MatrixMeasure:
    """Finitely supported probability on SL_d, optionally mollified."""

    d: int
    atoms: tuple  # ((p, g), ...) with g a d x d array
    mollifier: MollifierSpec | None = None

    def __post_init__(self):
        atoms = tuple(
            (float(p), np.asarray(g, dtype=float)) for p, g in self.atoms
        )
        object.__setattr__(self, "atoms", atoms)
        weights = np.array([p for p, _ in atoms])
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        for _, g in atoms:
            if g.shape != (self.d, self.d):
                raise DimensionMismatch("atom dimension mismatch")
            if abs(np.linalg.det(g) - 1.0) > 1e-9:
                raise ValueError("atoms must have determinant 1")

    @property
    def weights(self) -> np.ndarray:
        return np.array([p for p, _ in self.atoms])

    @property
    def matrices(self) -> np.ndarray:
        return np.stack([g for _, g in self.atoms])

    @property
    def is_discrete(self) -> bool:
        return self.mollifier is None

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(len(self.atoms), size=n, p=self.weights)

    def sample_batch(self, n: int, rng: np.random.Generator) -> np.ndarray:
        out = self.matrices[self.sample_indices(n, rng)]
        if self.mollifier is not None:
            out = self.mollifier.sample(self.d, n, rng) @ out
        return out

    def inverse(self) -> "MatrixMeasure":
        """Image of the measure under g -> g^{-1}."""
        atoms = tuple((p, np.linalg.inv(g)) for p, g in self.atoms)
        return MatrixMeasure(self.d, atoms, self.mollifier)

    def without_mollifier(self) -> "MatrixMeasure":
        return MatrixMeasure(self.d, self.atoms, None)

    def to_json(self) -> str:
        obj = {
            "d": self.d,
            "atoms": [{"p": p, "m": g.tolist()} for p, g in self.atoms],
        }
        if self.mollifier is not None:
            obj["mollify"] = self.mollifier.to_json_obj()
        return json.dumps(obj)

    @classmethod
    def from_json(cls, text: str) -> "MatrixMeasure":
        obj = json.loads(text)
        atoms = tuple((a["p"], np.array(a["m"], dtype=float)) for a in obj["atoms"])
        moll = None
        if "mollify" in obj:
            m = obj["mollify"]
            moll = MollifierSpec(
                epsilon=float(m["epsilon"]),
                kind=m.get("kind", "so_ball"),
                full_support=bool(m.get("full_support", False)),
            )
        return cls(int(obj["d"]), atoms, moll)

    @classmethod
    def uniform(cls, mats, mollifier=None) -> "MatrixMeasure":
        mats = [np.asarray(m, dtype=float) for m in mats]
        p = 1.0 / len(mats)
        return cls(mats[0].shape[0], tuple((p, m) for m in mats), mollifier)


@dataclass(frozen=True, eq=False)
class LyapunovSpectrum:
    """Exponents chi_1 >= ... >= chi_d in nats per step with batch-mean errors."""

    chi: np.ndarray
    stderr: np.ndarray
    steps: int

    def __post_init__(self):
        object.__setattr__(self, "chi", np.asarray(self.chi, dtype=float))
        object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float))

    @property
    def d(self) -> int:
        return len(self.chi)

    def gaps(self) -> np.ndarray:
        return self.chi[:-1] - self.chi[1:]

    def is_simple(self, factor: float = 5.0) -> bool:
        # Absolute floor guards the deterministic case where the standard
        # errors themselves vanish (e.g. finite rotation groups).
        limit = factor * np.sqrt(self.stderr[:-1] ** 2 + self.stderr[1:] ** 2)
        return bool(np.all(self.gaps() > np.maximum(limit, 1e-12)))


def lyapunov_spectrum(
    mu: MatrixMeasure, steps: int, seed: int, chunks: int = 100
) -> LyapunovSpectrum:
    """QR-deflation estimate of the Lyapunov spectrum.

    Runs `chunks` independent trajectories in lockstep (vectorized), each of
    length steps // chunks, re-orthonormalizing every step; the chunk means
    give the batch-mean standard error.  Deterministic for a fixed seed.
    """
    if steps < 10 ** 3:
        raise ValueError("need at least 1000 steps")
    d = mu.d
    per_chunk = steps // chunks
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    q = np.tile(np.eye(d), (chunks, 1, 1))
    logsums = np.zeros((chunks, d))
    for _ in range(per_chunk):
        gs = mu.sample_batch(chunks, rng)
        q, r = qr_positive_batch(gs @ q)
        logsums += np.log(np.abs(np.diagonal(r, axis1=-2, axis2=-1)))
    per = logsums / per_chunk
    chi = per.mean(axis=0)
    stderr = per.std(axis=0, ddof=1) / math.sqrt(chunks)
    order = np.argsort(-chi, kind="stable")
    return LyapunovSpectrum(chi[order], stderr[order], steps=per_chunk * chunks)


def unstable_flag_from_sequence(gs) -> FlagPoint:
    """Flag of the product gs[0] @ gs[1] @ ... @ gs[-1], computed by folding
    from the innermost factor outward with a QR re-orthonormalization at each
    application; every flag level stays well-conditioned."""
    d = gs[0].shape[0]
    f = np.eye(d)
    for g in reversed(gs):
        f, _ = qr_positive(g @ f)
    return FlagPoint(f)


def stable_flag_from_sequence(gs) -> FlagPoint:
    """Stable flag of the forward product gs[-1] @ ... @ gs[0].

    The top flag of the transposed product gs[0]^T gs[1]^T ... carries the
    fastest-contracted directions first; reversing its orthonormal columns
    gives the stable flag U'_k = span of the last k columns.
    """
    d = gs[0].shape[0]
    f = np.eye(d)
    for g in reversed(gs):
        f, _ = qr_positive(g.T @ f)
    return flag_from_matrix(f[:, ::-1])


@dataclass(frozen=True, eq=False)
class OseledetsFrame:
    """Unstable and stable limit flags with the splitting lines E_i."""

    Eminus: FlagPoint  # unstable flag, law nu
    Eplus: FlagPoint  # stable flag, law nu'
    lines: tuple  # (E_1, ..., E_d) as Subspace values
    residual: float

    @property
    def d(self) -> int:
        return self.Eminus.d

    def line_matrix(self) -> np.ndarray:
        return np.column_stack([s.frame[:, 0] for s in self.lines])


def oseledets_frames(
    mu: MatrixMeasure,
    depth: int,
    seed: int,
    tol: float = 1e-8,
    spectrum: LyapunovSpectrum | None = None,
) -> OseledetsFrame:
    """Sample one Oseledets splitting: unstable flag from a backward product,
    stable flag from an independent forward product, lines by intersection.

    Convergence is declared when doubling the depth moves each flag by less
    than tol (Cauchy criterion); otherwise NotConverged carries the residual.
    """
    if spectrum is None:
        spectrum = lyapunov_spectrum(mu, 10 ** 5, seed=seed ^ 0x5EED)
    if not spectrum.is_simple():
        raise SpectrumNotSimple(
            f"gaps {spectrum.gaps()} not separated at 5x stderr {spectrum.stderr}"
        )
    ss = np.random.SeedSequence(seed)
    rng_back, rng_fwd = [np.random.default_rng(s) for s in ss.spawn(2)]
    back = list(mu.sample_batch(2 * depth, rng_back))
    fwd = list(mu.sample_batch(2 * depth, rng_fwd))
    eminus_half = unstable_flag_from_sequence(back[:depth])
    eminus = unstable_flag_from_sequence(back)
    eplus_half = stable_flag_from_sequence(fwd[:depth])
    eplus = stable_flag_from_sequence(fwd)
    residual = max(
        flag_distance(eminus_half, eminus), flag_distance(eplus_half, eplus)
    )
    if residual > tol:
        raise NotConverged(
            f"flag residual {residual:.3e} above tol {tol:.1e} at depth {depth}",
            residual=residual,
        )
    d = mu.d
    lines = tuple(
        _intersect_line(eminus.level(i), eplus.level(d - i + 1)) for i in range(1, d + 1)
    )
    return OseledetsFrame(Eminus=eminus, Eplus=eplus, lines=lines, residual=residual)


def _intersect_line(u: Subspace, u2: Subspace) -> Subspace:
    from .linalg import subspace_intersect

    inter = subspace_intersect(u, u2, tol=1e-6)
    if inter.k != 1:
        raise SpectrumNotSimple("flag intersection is not a line")
    return inter


def sample_unstable_flags(
    mu: MatrixMeasure, n: int, depth: int, rng: np.random.Generator
) -> np.ndarray:
    """n independent approximate samples of the limit-flag law, as a stack of
    canonical frames (n, d, d).  Vectorized across samples."""
    d = mu.d
    frames = np.tile(np.eye(d), (n, 1, 1))
    # Innermost factors first: frames accumulate g_1 (g_2 (... g_depth I)).
    draws = [mu.sample_batch(n, rng) for _ in range(depth)]
    for gs in reversed(draws):
        frames, _ = qr_positive_batch(gs @ frames)
    return frames


def partial_sum_check(
    mu: MatrixMeasure,
    spectrum: LyapunovSpectrum,
    j: int,
    samples: int,
    seed: int,
    depth: int = 100,
):
    """Furstenberg-Kesten cross-check: sum of the top j exponents against the
    independent Monte Carlo estimate of E[log |det restricted to U_j(f)| ] with
    f drawn from fresh backward products and g from mu.

    Returns (lhs, rhs, z).
    """
    d = mu.d
    if not 1 <= j <= d:
        raise ValueError("level j out of range")
    lhs = float(np.sum(spectrum.chi[:j]))
    lhs_se = float(np.sqrt(np.sum(spectrum.stderr[:j] ** 2)))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    frames = sample_unstable_flags(mu, samples, depth, rng)[:, :, :j]
    gs = mu.sample_batch(samples, rng)
    gf = gs @ frames
    grams = np.einsum("nik,nil->nkl", gf, gf)
    sign, logdet = np.linalg.slogdet(grams)
    vals = 0.5 * logdet
    rhs = float(vals.mean())
    rhs_se = float(vals.std(ddof=1) / math.sqrt(samples))
    denom = math.sqrt(lhs_se ** 2 + rhs_se ** 2)
    z = (rhs - lhs) / denom if denom > 0 else 0.0
    return lhs, rhs, z


def extend_configuration(
    t: AdmissibleTopology, t2: AdmissibleTopology, xp: Configuration
) -> Configuration:
    """Extend a configuration from the coarser topology t2 to the finer t.

    Line i is the unit direction inside x'_{T'(i)} perpendicular to
    x'_{T'(i) minus i}; sums of these lines restrict to x' on t2.
    """
    if not is_finer(t, t2):
        raise NotComparable("extension requires the first topology to be finer")
    if xp.topology != t2:
        raise NotComparable("configuration must live on the coarser topology")
    d = t.d
    lines = np.empty((d, d))
    for i in range(1, d + 1):
        big = xp.topology.atom(i)
        rest = frozenset(big - {i})
        a_frame = xp.atom_space(i).frame
        if rest:
            proj = np.eye(d) - _open_space(xp, rest).projector()
            red = proj @ a_frame
            u, sv, _ = np.linalg.svd(red, full_matrices=False)
            lines[:, i - 1] = u[:, 0]
        else:
            lines[:, i - 1] = a_frame[:, 0]
    return config_from_lines(t, lines)


def apply_to_config(g: np.ndarray, x: Configuration) -> Configuration:
    """Image configuration (g x)_I = g x_I, frames re-orthonormalized."""
    spaces = {iset: sub.apply(g) for iset, sub in x.spaces.items()}
    lines = None
    if x.lines is not None:
        lines = g @ x.lines
        lines = lines / np.linalg.norm(lines, axis=0, keepdims=True)
    return Configuration(x.topology, spaces, lines=lines)


@dataclass(frozen=True)
class RateProbe:
    """Fitted decay rate of the pushed-extension error against depth."""

    depths: tuple
    distances: tuple
    slope: float | None
    bound: float  # minus the minimal exponent gap over the removed pairs
    degenerate: bool = False


def convergence_rate_probe(
    t: AdmissibleTopology,
    t2: AdmissibleTopology,
    mu: MatrixMeasure,
    depths,
    seed: int,
    spectrum: LyapunovSpectrum | None = None,
    tail_depth: int = 300,
) -> RateProbe:
    """Measure dist(g_{-1}...g_{-n} Ext(x'(-n)), x(0)) against n and fit the
    log-linear slope; the theoretical rate is minus the smallest exponent gap
    chi_i - chi_j over the removed pairs.
    """
    depths = sorted(int(n) for n in depths)
    if spectrum is None:
        spectrum = lyapunov_spectrum(mu, 10 ** 5, seed=seed ^ 0x5EED)
    if not spectrum.is_simple():
        raise SpectrumNotSimple("rate probe needs a simple spectrum")
    pairs = removed_pairs(t, t2)
    if len(pairs) == 0:
        return RateProbe(tuple(depths), tuple(0.0 for _ in depths), None, 0.0, True)
    bound = -min(
        float(spectrum.chi[i - 1] - spectrum.chi[j - 1]) for i, j in pairs
    )
    ss = np.random.SeedSequence(seed)
    rng_back, rng_fwd = [np.random.default_rng(s) for s in ss.spawn(2)]
    n_max = depths[-1]
    back = list(mu.sample_batch(n_max + tail_depth, rng_back))  # g_{-1}, g_{-2}, ...
    fwd = list(mu.sample_batch(tail_depth, rng_fwd))
    eminus0 = unstable_flag_from_sequence(back)
    eplus0 = stable_flag_from_sequence(fwd)
    target = assemble_config(t, eminus0, eplus0)
    dists = []
    for n in depths:
        # Oseledets flags at time -n for the same two-sided sequence.  The
        # stable flag is recomputed from the shifted forward word; pulling the
        # time-0 flag back through inverses would amplify rounding error.
        eminus_n = unstable_flag_from_sequence(back[n:])
        eplus_n = stable_flag_from_sequence(back[:n][::-1] + fwd)
        xp = assemble_config(t2, eminus_n, eplus_n)
        ext = extend_configuration(t, t2, xp)
        # Push forward set by set.  Sets of the coarser topology are exactly
        # invariant (equivariance of the limit configuration), so they are
        # taken from the target instead of being pushed numerically: pushing
        # slowly-growing subspaces through the expanding product amplifies
        # rounding error at the exponent-spread rate.  The remaining sets are
        # split into their largest coarse-open subset (again taken from the
        # target) plus individual extension lines; each line is pushed on its
        # own and then re-projected onto the invariant coarse atom containing
        # it, which removes fast-mode rounding contamination picked up along
        # the way.
        coarse_sets = set(t2.open_sets())
        spaces = {}
        pushed_lines = {}
        for iset, sub in ext.spaces.items():
            if iset in coarse_sets:
                spaces[iset] = target.spaces[iset]
                continue
            inner = [j for j in iset if t2.atom(j) <= iset]
            interior = frozenset().union(*(t2.atom(j) for j in inner)) if inner else frozenset()
            parts = [target.spaces[interior].frame] if interior else []
            for i in sorted(iset - interior):
                if i not in pushed_lines:
                    v = ext.lines[:, i - 1].copy()
                    for k in reversed(range(n)):
                        v = back[k] @ v
                        v /= np.linalg.norm(v)
                    atom_q = frozenset(t2.atom(i))
                    comp = frozenset(range(1, t.d + 1)) - atom_q
                    pframe = target.spaces[atom_q].frame
                    if comp in target.spaces:
                        # Oblique projection along the complementary invariant
                        # space: the contamination lives in the fast directions,
                        # which are not orthogonal to the atom.
                        basis = np.column_stack([pframe, target.spaces[comp].frame])
                        coef = np.linalg.solve(basis, v)
                        v = pframe @ coef[: pframe.shape[1]]
                    else:
                        v = pframe @ (pframe.T @ v)
                    v /= np.linalg.norm(v)
                    pushed_lines[i] = v
                parts.append(pushed_lines[i][:, np.newaxis])
            frame, _ = qr_positive(np.column_stack(parts), allow_rectangular=True)
            spaces[iset] = Subspace(frame)
        pushed = Configuration(t, spaces)
        dists.append(config_distance(pushed, target))
    floor = 1e-13
    usable = [(n, dist) for n, dist in zip(depths, dists) if dist > floor]
    if len(usable) < 2:
        return RateProbe(tuple(depths), tuple(dists), None, bound, True)
    xs = np.array([n for n, _ in usable], dtype=float)
    ys = np.log(np.array([dist for _, dist in usable]))
    slope = float(np.polyfit(xs, ys, 1)[0])
    return RateProbe(tuple(depths), tuple(dists), slope, bound, False)
