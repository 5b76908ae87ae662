"""End-to-end experiment pipelines shared by the command line and the test
suite: spectrum + entropy + chain fiber dimensions + consistency report."""

from __future__ import annotations

import math

import numpy as np

from .clouds import (
    DEFAULT_RADII,
    PointCloud,
    condition_on_projection,
    knn_dimension,
    local_dimension,
    sample_config_cloud,
)
from .entropy import furstenberg_bound, ly_report, lyapunov_profile, rw_entropy
from .errors import InsufficientScaling
from .topology import AdmissibleTopology, IntervalPartition, chain_decompose, one_step
from .walk import MatrixMeasure, lyapunov_spectrum


def pooled_gamma(results):
    """Weighted pooling of per-bin fiber dimension estimates."""
    weights = np.array([len(us) for _, us, _ in results], dtype=float)
    weights = weights / weights.sum()
    vals = np.array([est.delta for _, _, est in results])
    cis = np.array([est.ci for _, _, est in results])
    gamma = float(np.sum(weights * vals))
    ci = float(np.sqrt(np.sum((weights * cis) ** 2)))
    return gamma, max(ci, 1e-6)


def chain_fiber_dimensions(
    mu: MatrixMeasure,
    chain,
    cloud: PointCloud,
    bin_radius: float,
    seed: int,
    radii=DEFAULT_RADII,
    min_bin: int = 500,
):
    """Per-arrow (i, j, chi-slot, gamma, ci) measurements along a one-step chain.

    The same line-matrix cloud serves every topology of the chain; only the
    metric (the family of open sets) changes.
    """
    out = []
    flagged = []
    for t_idx in range(1, len(chain)):
        finer, coarser = chain[t_idx], chain[t_idx - 1]
        i, j = one_step(finer, coarser)
        view = PointCloud(
            kind="topology", d=cloud.d, points=cloud.points,
            topology=finer, anchor=cloud.anchor, depth=cloud.depth,
            seed=cloud.seed, measure_hash=cloud.measure_hash,
        )
        try:
            results = condition_on_projection(
                view, finer, coarser, bin_radius, seed=seed + t_idx,
                radii=radii, min_bin=min_bin,
            )
            gamma, ci = pooled_gamma(results)
        except InsufficientScaling as exc:
            gamma, ci = float("nan"), float("nan")
            flagged.append({"arrow": (i, j), "issue": str(exc)})
        out.append((i, j, gamma, ci))
    return out, flagged


def run_ly_pipeline(
    mu: MatrixMeasure,
    seed: int,
    steps: int = 10 ** 6,
    n_max: int = 12,
    n_points: int = 10 ** 5,
    depth: int = 250,
    bin_radius: float = 0.2,
    radii=DEFAULT_RADII,
    delta_radii=None,
    min_bin: int = 500,
) -> dict:
    """Full consistency experiment: compare the chain-weighted fiber dimensions
    with the random-walk entropy and the summed fiber dimensions with the
    directly estimated cloud dimension.

    The fiber regressions use the small default radii (fibers are
    one-dimensional charts), while the direct cloud dimension uses larger
    radii by default: the cloud spreads over several units and small balls
    are empty at practical sample sizes.
    """
    d = mu.d
    spectrum = lyapunov_spectrum(mu, steps, seed=seed)
    h = rw_entropy(mu.without_mollifier(), n_max=n_max)
    q_full = IntervalPartition.full(d)
    bound = furstenberg_bound(spectrum, q_full)
    profile = lyapunov_profile(h, spectrum, q_full)
    t_fine = AdmissibleTopology.finest(d)
    t_coarse = AdmissibleTopology.coarsest(d)
    chain = chain_decompose(t_fine, t_coarse, spectrum.chi)
    cloud = sample_config_cloud(mu, t_fine, n_points, depth, seed=seed + 1)
    measured, flagged = chain_fiber_dimensions(
        mu, chain, cloud, bin_radius, seed=seed + 2, radii=radii, min_bin=min_bin
    )
    if delta_radii is None:
        delta_radii = np.geomspace(0.03, 0.5, 8)
    delta_est = local_dimension(cloud, radii=delta_radii, n_centers=200, seed=seed + 3)
    arrows = []
    for (i, j, gamma, ci) in measured:
        chi_val = float(spectrum.chi[i - 1] - spectrum.chi[j - 1])
        arrows.append((i, j, chi_val, gamma, ci))
    usable = [a for a in arrows if not math.isnan(a[3])]
    report = ly_report(usable, h, delta=(delta_est.delta, delta_est.ci))
    report["spectrum"] = [float(c) for c in spectrum.chi]
    report["stderr"] = [float(s) for s in spectrum.stderr]
    report["bound"] = bound
    report["lyapdim"] = profile.dim_ly
    report["flagged"] = flagged
    return report


def projective_dimension_report(
    mu: MatrixMeasure,
    seed: int,
    steps: int = 10 ** 6,
    n_max: int = 12,
    n_points: int = 10 ** 5,
    depth: int = 250,
    radii=DEFAULT_RADII,
) -> dict:
    """d = 2 experiment: projective cloud dimension against h / (chi_1 - chi_2)
    and the dimension profile root."""
    from .clouds import sample_stationary_cloud

    if mu.d != 2:
        raise ValueError("projective report is a d = 2 experiment")
    spectrum = lyapunov_spectrum(mu, steps, seed=seed)
    h = rw_entropy(mu.without_mollifier(), n_max=n_max)
    q = IntervalPartition.full(2)
    cloud = sample_stationary_cloud(mu, q, n_points, depth, seed=seed + 1)
    est_local = local_dimension(cloud, radii=radii, n_centers=200, seed=seed + 2)
    est_knn = knn_dimension(cloud, k=10, seed=seed + 3)
    gap = float(spectrum.chi[0] - spectrum.chi[1])
    predicted = min(h.h / gap, 1.0)
    profile = lyapunov_profile(h, spectrum, q)
    return {
        "spectrum": [float(c) for c in spectrum.chi],
        "stderr": [float(s) for s in spectrum.stderr],
        "entropy": {"h": h.h, "ci": h.ci, "method": h.method},
        "bound": gap,
        "lyapdim": profile.dim_ly,
        "delta": {"value": est_local.delta, "ci": est_local.ci},
        "delta_knn": {"value": est_knn.delta, "ci": est_knn.ci},
        "predicted_dimension": predicted,
    }
