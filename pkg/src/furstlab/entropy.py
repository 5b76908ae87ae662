"""Entropy estimators and dimension profiles: exact random-walk entropy by
convolution powers, the exponent-difference upper bound, a k-nearest-neighbor
mutual-information estimator for mollified walks, the Kaplan-Yorke style
dimension profile and the entropy/dimension consistency report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma
from sklearn.neighbors import KDTree, NearestNeighbors

from .errors import (
    ChainMismatch,
    EntropyExceedsBound,
    EstimatorUnstable,
    StateExplosion,
)
from .topology import AdmissibleTopology, IntervalPartition, removed_pairs
from .walk import LyapunovSpectrum, MatrixMeasure, MollifierSpec, lyapunov_spectrum

SUPPORT_CAP = 10 ** 7
KEY_SCALE = 1e9


@dataclass(frozen=True)
class EntropyEstimate:
    """Entropy in nats per step with a method tag and spread-based half-width."""

    h: float
    ci: float
    method: str  # exact-enumeration | extrapolated | mi-knn
    n: int  # n_max or sample size
    sequence: tuple = ()  # H(mu^(k))/k for k = 1..n when enumerated

    def __post_init__(self):
        if self.h < -1e-12:
            raise ValueError("entropy must be nonnegative")


def _entropy(probs: np.ndarray) -> float:
    return float(-np.sum(probs * np.log(probs)))


def rw_entropy(mu: MatrixMeasure, n_max: int) -> EntropyEstimate:
    """Random-walk entropy lim H(mu^(n))/n by exact convolution powers.

    Support elements are keyed by entries rounded to a 1e-9 grid, so matrices
    closer than the grid are identified; exact for integer or rational atoms.
    The increments H(mu^(n)) - H(mu^(n-1)) converge to the entropy from above
    with an O(1/n) bias, so the estimate extrapolates the last two increments,
    n*inc_n - (n-1)*inc_{n-1}, which cancels the 1/n term exactly.  The spread
    of the last three increments serves as half-width.
    """
    if not mu.is_discrete:
        raise ValueError("rw_entropy needs a discrete (unmollified) measure")
    if n_max < 2:
        raise ValueError("need n_max >= 2")
    d = mu.d
    atoms = mu.matrices
    weights = mu.weights
    support = atoms.copy()
    probs = weights.copy()
    support, probs = _merge(support, probs)
    hs = [_entropy(probs)]
    for n in range(2, n_max + 1):
        new_support = np.concatenate([support @ a for a in atoms])
        new_probs = np.concatenate([probs * w for w in weights])
        if len(new_support) > SUPPORT_CAP:
            raise StateExplosion(
                f"support size {len(new_support)} exceeds cap at step {n}",
                partial=tuple(h / (k + 1) for k, h in enumerate(hs)),
            )
        support, probs = _merge(new_support, new_probs)
        hs.append(_entropy(probs))
    increments = [hs[0]] + [b - a for a, b in zip(hs, hs[1:])]
    last = increments[-3:]
    ci = max(max(last) - min(last), 1e-12)
    n = len(increments)
    estimate = n * increments[-1] - (n - 1) * increments[-2]
    return EntropyEstimate(
        h=max(estimate, 0.0),
        ci=ci,
        method="exact-enumeration",
        n=n_max,
        sequence=tuple(h / (k + 1) for k, h in enumerate(hs)),
    )


def _merge(support: np.ndarray, probs: np.ndarray):
    """Aggregate probabilities of identical group elements (grid-keyed)."""
    flat = support.reshape(len(support), -1)
    scaled = np.round(flat * KEY_SCALE)
    if np.any(np.abs(scaled) > 9e18):
        raise StateExplosion("matrix entries too large for exact keying")
    keys = scaled.astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    out_probs = np.zeros(len(uniq))
    np.add.at(out_probs, inverse, probs)
    # Keep one exact representative per class (first occurrence).
    first_idx = np.full(len(uniq), len(inverse), dtype=np.int64)
    np.minimum.at(first_idx, inverse, np.arange(len(inverse)))
    return support[first_idx], out_probs


def furstenberg_bound(spectrum: LyapunovSpectrum, q: IntervalPartition) -> float:
    """Sum of exponent differences chi_i - chi_j over pairs split by Q."""
    chi = spectrum.chi
    return float(
        sum(chi[i - 1] - chi[j - 1] for i, j in q.pairs_split())
    )


def _rotation_coords(rots: np.ndarray) -> np.ndarray:
    """Injective log-chart coordinates of rotations (d = 2 or 3)."""
    d = rots.shape[-1]
    if d == 2:
        return np.arctan2(rots[:, 1, 0], rots[:, 0, 0])[:, None]
    if d == 3:
        from scipy.spatial.transform import Rotation

        return Rotation.from_matrix(rots).as_rotvec()
    raise ValueError("rotation chart implemented for d = 2, 3 only")


def _flag_coords(frames: np.ndarray, q: IntervalPartition) -> np.ndarray:
    """Smooth embedding of partial flags: stacked level projectors."""
    blocks = []
    for cut in q.levels:
        sub = frames[:, :, :cut]
        projs = np.einsum("nik,njk->nij", sub, sub)
        blocks.append(projs.reshape(len(frames), -1) / math.sqrt(2.0))
    return np.concatenate(blocks, axis=1)


def _ksg_mi(x: np.ndarray, y: np.ndarray, k: int) -> float:
    """Kraskov k-NN mutual information (variant 1), max-norm, in nats."""
    n = len(x)
    joint = np.concatenate([x, y], axis=1)
    nn = NearestNeighbors(n_neighbors=k + 1, metric="chebyshev").fit(joint)
    eps, _ = nn.kneighbors(joint)
    eps = eps[:, -1]
    tx = KDTree(x, metric="chebyshev")
    ty = KDTree(y, metric="chebyshev")
    shrink = np.nextafter(eps, 0.0)
    nx = tx.query_radius(x, shrink, count_only=True) - 1
    ny = ty.query_radius(y, shrink, count_only=True) - 1
    val = (
        digamma(k)
        + digamma(n)
        - np.mean(digamma(nx + 1) + digamma(ny + 1))
    )
    return float(val)


def mollified_mi(
    mu: MatrixMeasure,
    epsilon: float,
    q: IntervalPartition,
    n_samples: int,
    k: int = 4,
    seed: int = 0,
    depth: int = 100,
    spectrum_steps: int = 2 * 10 ** 5,
):
    """Mutual information between a mollified increment g and the moved flag gf
    against the exponent-difference identity for the mollified walk.

    Returns (mi_estimate, identity_rhs, z).
    """
    if mu.d not in (2, 3):
        raise ValueError("MI estimator supported for d = 2, 3 only")
    moll = MollifierSpec(epsilon=epsilon, full_support=True)
    mu_eps = MatrixMeasure(mu.d, mu.atoms, moll)
    ss = np.random.SeedSequence(seed)
    s_spec, s_flags, s_pairs = ss.spawn(3)
    spec = lyapunov_spectrum(mu_eps, spectrum_steps, seed=s_spec.entropy % (2 ** 32))
    rhs = furstenberg_bound(spec, q)
    from .walk import sample_unstable_flags

    rng_f = np.random.default_rng(s_flags)
    flags = sample_unstable_flags(mu_eps, n_samples, depth, rng_f)
    rng_p = np.random.default_rng(s_pairs)
    idx = mu_eps.sample_indices(n_samples, rng_p)
    rots = moll.sample(mu.d, n_samples, rng_p)
    gs = rots @ mu_eps.matrices[idx]
    moved = gs @ flags
    from .linalg import qr_positive_batch

    moved_frames, _ = qr_positive_batch(moved)
    x = np.concatenate(
        [10.0 * idx[:, None].astype(float), _rotation_coords(rots)], axis=1
    )
    y = _flag_coords(moved_frames, q)
    mi = _ksg_mi(x, y, k)
    # Stability across 5 disjoint subsamples.
    perm = np.random.default_rng(seed + 1).permutation(n_samples)
    parts = np.array_split(perm, 5)
    subs = [_ksg_mi(x[p], y[p], k) for p in parts]
    mean_sub = float(np.mean(subs))
    if mean_sub > 0 and (max(subs) - min(subs)) / mean_sub > 0.25:
        raise EstimatorUnstable(
            f"MI subsample spread {max(subs) - min(subs):.3f} exceeds 25% of {mean_sub:.3f}"
        )
    se = float(np.std(subs, ddof=1)) / math.sqrt(len(subs))
    rhs_se = float(np.sqrt(np.sum(spec.stderr[:-1] ** 2 + spec.stderr[1:] ** 2)))
    denom = math.sqrt(se ** 2 + rhs_se ** 2)
    z = (mi - rhs) / denom if denom > 0 else 0.0
    return mi, rhs, z


@dataclass(frozen=True)
class LyapunovDimensionProfile:
    """Piecewise-affine profile D with D(0) = h and slope -lambda_k on (k-1, k)."""

    lambdas: tuple  # ascending positive exponent differences
    h: float
    breakpoints: tuple  # D(k) for k = 0..N
    dim_ly: float
    saturated: bool = False


def lyapunov_profile(
    h: EntropyEstimate, spectrum: LyapunovSpectrum, q: IntervalPartition
) -> LyapunovDimensionProfile:
    """Dimension profile from entropy and the Q-split exponent differences."""
    lambdas = sorted(
        float(spectrum.chi[i - 1] - spectrum.chi[j - 1]) for i, j in q.pairs_split()
    )
    bound = sum(lambdas)
    if h.h > bound + 3.0 * h.ci:
        raise EntropyExceedsBound(
            f"entropy {h.h:.4f} exceeds exponent bound {bound:.4f} beyond noise"
        )
    breaks = [h.h]
    for lam in lambdas:
        breaks.append(breaks[-1] - lam)
    n = len(lambdas)
    if not lambdas:
        return LyapunovDimensionProfile((), h.h, tuple(breaks), 0.0, False)
    if breaks[-1] > 0:
        return LyapunovDimensionProfile(
            tuple(lambdas), h.h, tuple(breaks), float(n), True
        )
    for kk in range(1, n + 1):
        if breaks[kk] <= 0:
            dim = (kk - 1) + breaks[kk - 1] / lambdas[kk - 1]
            return LyapunovDimensionProfile(
                tuple(lambdas), h.h, tuple(breaks), float(dim), False
            )
    raise AssertionError("unreachable: profile must cross zero")


def dimension_conservation(
    t: AdmissibleTopology,
    t2: AdmissibleTopology,
    t3: AdmissibleTopology,
    spectrum: LyapunovSpectrum,
) -> bool:
    """True when every exponent gap removed between t and t2 dominates every
    gap removed between t2 and t3 (the projection then conserves dimension)."""
    gaps_hi = [
        float(spectrum.chi[i - 1] - spectrum.chi[j - 1])
        for i, j in removed_pairs(t, t2)
    ]
    gaps_lo = [
        float(spectrum.chi[i - 1] - spectrum.chi[j - 1])
        for i, j in removed_pairs(t2, t3)
    ]
    if not gaps_hi or not gaps_lo:
        return True
    return min(gaps_hi) >= max(gaps_lo)


def ly_report(arrows, h: EntropyEstimate, delta=None):
    """Consistency report for the chain entropy formula.

    arrows: list of (i, j, chi, gamma, gamma_ci) along a one-step chain from
    the coarsest topology, chi values nondecreasing.  Compares the weighted sum
    of fiber dimensions with the entropy, and (optionally) the plain sum of
    fiber dimensions with a direct dimension estimate `delta` =
    (value, half-width).
    """
    chis = [a[2] for a in arrows]
    if any(b < a - 1e-12 for a, b in zip(chis, chis[1:])):
        raise ChainMismatch("arrow exponents must be nondecreasing along the chain")
    kappa = sum(a[2] * a[3] for a in arrows)
    kappa_se = math.sqrt(sum((a[2] * a[4] / 1.96) ** 2 for a in arrows))
    h_se = h.ci / 1.96 if h.ci > 0 else 1e-12
    denom = math.sqrt(kappa_se ** 2 + h_se ** 2)
    ly_z = (kappa - h.h) / denom if denom > 0 else 0.0
    gamma_sum = sum(a[3] for a in arrows)
    gamma_sum_se = math.sqrt(sum((a[4] / 1.96) ** 2 for a in arrows))
    report = {
        "arrows": [
            {"i": a[0], "j": a[1], "chi": a[2], "gamma": a[3], "gamma_ci": a[4]}
            for a in arrows
        ],
        "kappa": kappa,
        "entropy": {"h": h.h, "ci": h.ci, "method": h.method},
        "gamma_sum": gamma_sum,
        "bounds_ok": all(-0.05 <= a[3] <= 1.05 for a in arrows),
        "checks": {"ly_formula_z": ly_z},
    }
    if delta is not None:
        dval, dci = delta
        d_se = dci / 1.96 if dci > 0 else 1e-12
        dden = math.sqrt(gamma_sum_se ** 2 + d_se ** 2)
        report["delta"] = {"value": dval, "ci": dci}
        report["checks"]["dim_sum_z"] = (gamma_sum - dval) / dden if dden > 0 else 0.0
    return report
