"""Command-line harness: experiment orchestration, JSON reports, SVG plots.

Reports are deterministic for a fixed config and seed apart from the timestamp
field; every report embeds the config hash and the package version.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import os
import sys

import click
import numpy as np

from . import __version__
from .errors import (
    BinsTooSparse,
    DepthInsufficient,
    EstimatorUnstable,
    FurstlabError,
    InsufficientScaling,
    NotConverged,
)
from .presets import list_presets, load_preset
from .topology import (
    AdmissibleTopology,
    IntervalPartition,
    chain_decompose,
    chain_arrows,
    count_one_step_arrows,
    enumerate_admissible,
    to_dot,
)
from .walk import (
    MatrixMeasure,
    convergence_rate_probe,
    lyapunov_spectrum,
    oseledets_frames,
    partial_sum_check,
)

QUALITY_ERRORS = (
    InsufficientScaling,
    EstimatorUnstable,
    BinsTooSparse,
    NotConverged,
    DepthInsufficient,
)


def _config_hash(obj) -> str:
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _emit(out, payload, config_obj):
    payload = dict(payload)
    payload["version"] = __version__
    payload["config_hash"] = _config_hash(config_obj)
    payload["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    text = json.dumps(payload, sort_keys=True, indent=1) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def _fail(out, config_obj, exc, code):
    _emit(out, {"error": {"type": type(exc).__name__, "message": str(exc)}}, config_obj)
    sys.exit(code)


def _load_measure(preset, config):
    if (preset is None) == (config is None):
        raise click.UsageError("provide exactly one of --preset / --config")
    if preset is not None:
        return load_preset(preset), {"preset": preset}
    with open(config) as fh:
        text = fh.read()
    return MatrixMeasure.from_json(text), {"measure": json.loads(text)}


def _parse_partition(text, d):
    if text is None:
        return IntervalPartition.full(d)
    cuts = tuple(int(c) for c in text.split(","))
    return IntervalPartition(d, cuts)


def _parse_topology(text, d):
    if text is None:
        return None
    return AdmissibleTopology(d, tuple(frozenset(a) for a in json.loads(text)))


def _set_threads(threads):
    # Deterministic for any worker count: all reductions run in fixed chunk
    # order; the thread knob only bounds BLAS pool sizes.
    os.environ.setdefault("OMP_NUM_THREADS", str(threads))


measure_opts = [
    click.option("--preset", type=click.Choice(list_presets()), default=None),
    click.option("--config", type=click.Path(exists=True), default=None,
                 help="measure JSON file"),
    click.option("--seed", type=int, required=True),
    click.option("--out", type=click.Path(), default=None),
    click.option("--threads", type=int, default=1),
]


def with_measure_opts(fn):
    for opt in reversed(measure_opts):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Numerical laboratory for random products of SL_d matrices."""


# ---------------------------------------------------------------- topo


@main.group()
def topo():
    """Admissible topology combinatorics."""


@topo.command("enum")
@click.option("-d", "dim", type=int, required=True)
@click.option("--out", type=click.Path(), default=None)
@click.option("--dot", type=click.Path(), default=None, help="write DOT digraph")
def topo_enum(dim, out, dot):
    cfg = {"task": "topo-enum", "d": dim}
    try:
        tops = enumerate_admissible(dim)
        arrows = count_one_step_arrows(tops)
        if dot:
            with open(dot, "w") as fh:
                fh.write(to_dot(tops))
        _emit(out, {
            "counts": {"topologies": len(tops), "arrows": arrows},
            "atoms": [[sorted(a) for a in t.atoms] for t in tops],
        }, cfg)
    except FurstlabError as exc:
        _fail(out, cfg, exc, 1)


@topo.command("chain")
@click.option("-d", "dim", type=int, required=True)
@click.option("--fine", default=None, help="atom lists JSON, default finest")
@click.option("--coarse", default=None, help="atom lists JSON, default coarsest")
@click.option("--chi", required=True, help="comma-separated decreasing exponents")
@click.option("--out", type=click.Path(), default=None)
def topo_chain(dim, fine, coarse, chi, out):
    cfg = {"task": "topo-chain", "d": dim, "fine": fine, "coarse": coarse, "chi": chi}
    try:
        t = _parse_topology(fine, dim) or AdmissibleTopology.finest(dim)
        t2 = _parse_topology(coarse, dim) or AdmissibleTopology.coarsest(dim)
        chi_vec = [float(c) for c in chi.split(",")]
        chain = chain_decompose(t, t2, chi_vec)
        arrows = chain_arrows(chain, chi_vec)
        _emit(out, {
            "chain": [[sorted(a) for a in step.atoms] for step in chain],
            "arrows": [{"i": i, "j": j, "chi": g} for i, j, g in arrows],
        }, cfg)
    except (FurstlabError, ValueError) as exc:
        _fail(out, cfg, exc, 1)


# ---------------------------------------------------------------- walk


@main.group()
def walk():
    """Lyapunov spectra, limit frames, convergence rates."""


@walk.command("exponents")
@with_measure_opts
@click.option("--steps", type=int, default=10 ** 6)
def walk_exponents(preset, config, seed, out, threads, steps):
    _set_threads(threads)
    try:
        mu, mcfg = _load_measure(preset, config)
        cfg = {"task": "exponents", "seed": seed, "steps": steps, **mcfg}
        spec = lyapunov_spectrum(mu, steps, seed)
        _emit(out, {
            "spectrum": spec.chi.tolist(),
            "stderr": spec.stderr.tolist(),
            "steps": spec.steps,
        }, cfg)
    except QUALITY_ERRORS as exc:
        _fail(out, {"task": "exponents"}, exc, 2)
    except (FurstlabError, ValueError, OSError) as exc:
        _fail(out, {"task": "exponents"}, exc, 1)


@walk.command("frames")
@with_measure_opts
@click.option("--depth", type=int, default=300)
@click.option("--tol", type=float, default=1e-8)
def walk_frames(preset, config, seed, out, threads, depth, tol):
    _set_threads(threads)
    try:
        mu, mcfg = _load_measure(preset, config)
        cfg = {"task": "frames", "seed": seed, "depth": depth, "tol": tol, **mcfg}
        frame = oseledets_frames(mu, depth, seed, tol=tol)
        _emit(out, {
            "Eminus": frame.Eminus.frame.tolist(),
            "Eplus": frame.Eplus.frame.tolist(),
            "lines": frame.line_matrix().tolist(),
            "residual": frame.residual,
        }, cfg)
    except QUALITY_ERRORS as exc:
        _fail(out, {"task": "frames"}, exc, 2)
    except (FurstlabError, ValueError, OSError) as exc:
        _fail(out, {"task": "frames"}, exc, 1)


@walk.command("rate")
@with_measure_opts
@click.option("--fine", default=None, help="atom lists JSON, default finest")
@click.option("--coarse", default=None, help="atom lists JSON, default coarsest")
@click.option("--depths", default="5,10,15,20")
@click.option("--plot", type=click.Path(), default=None)
def walk_rate(preset, config, seed, out, threads, fine, coarse, depths, plot):
    _set_threads(threads)
    try:
        mu, mcfg = _load_measure(preset, config)
        cfg = {"task": "rate", "seed": seed, "depths": depths,
               "fine": fine, "coarse": coarse, **mcfg}
        t = _parse_topology(fine, mu.d) or AdmissibleTopology.finest(mu.d)
        t2 = _parse_topology(coarse, mu.d) or AdmissibleTopology.coarsest(mu.d)
        depth_list = [int(x) for x in depths.split(",")]
        probe = convergence_rate_probe(t, t2, mu, depth_list, seed)
        if plot and not probe.degenerate:
            _plot_rate(probe, plot)
        _emit(out, {
            "depths": list(probe.depths),
            "distances": list(probe.distances),
            "slope": probe.slope,
            "bound": probe.bound,
            "degenerate": probe.degenerate,
        }, cfg)
    except QUALITY_ERRORS as exc:
        _fail(out, {"task": "rate"}, exc, 2)
    except (FurstlabError, ValueError, OSError) as exc:
        _fail(out, {"task": "rate"}, exc, 1)


# ---------------------------------------------------------------- measure


@main.group()
def measure():
    """Stationary clouds and dimension estimators."""


def _cloud_cache_path(cfg):
    cache = os.environ.get("FURSTLAB_CACHE")
    if not cache:
        return None
    os.makedirs(cache, exist_ok=True)
    return os.path.join(cache, f"cloud-{_config_hash(cfg)}.flgc")


@measure.command("sample")
@with_measure_opts
@click.option("--partition", default=None, help="cuts, e.g. 0,1,2")
@click.option("--n", "n_points", type=int, default=10 ** 4)
@click.option("--depth", type=int, default=60)
def measure_sample(preset, config, seed, out, threads, partition, n_points, depth):
    from .clouds import sample_stationary_cloud

    _set_threads(threads)
    try:
        mu, mcfg = _load_measure(preset, config)
        cfg = {"task": "sample", "seed": seed, "partition": partition,
               "n": n_points, "depth": depth, **mcfg}
        q = _parse_partition(partition, mu.d)
        cloud = sample_stationary_cloud(mu, q, n_points, depth, seed)
        path = out or "cloud.flgc"
        cloud.save(path)
        cache = _cloud_cache_path(cfg)
        if cache:
            cloud.save(cache)
        click.echo(json.dumps({"written": path, "n": cloud.n,
                               "config_hash": _config_hash(cfg)}))
    except QUALITY_ERRORS as exc:
        _fail(None, {"task": "sample"}, exc, 2)
    except (FurstlabError, ValueError, OSError) as exc:
        _fail(None, {"task": "sample"}, exc, 1)


@measure.command("dim")
@with_measure_opts
@click.option("--cloud", "cloud_path", type=click.Path(exists=True), default=None)
@click.option("--partition", default=None)
@click.option("--n", "n_points", type=int, default=10 ** 4)
@click.option("--depth", type=int, default=60)
@click.option("--plot", type=click.Path(), default=None)
def measure_dim(preset, config, seed, out, threads, cloud_path, partition,
                n_points, depth, plot):
    from .clouds import PointCloud, knn_dimension, local_dimension, sample_stationary_cloud

    _set_threads(threads)
    try:
        cfg = {"task": "dim", "seed": seed, "cloud": cloud_path,
               "partition": partition, "n": n_points, "depth": depth}
        if cloud_path:
            cloud = PointCloud.load(cloud_path)
        else:
            mu, mcfg = _load_measure(preset, config)
            cfg.update(mcfg)
            cache = _cloud_cache_path(cfg)
            if cache and os.path.exists(cache):
                cloud = PointCloud.load(cache)
            else:
                q = _parse_partition(partition, mu.d)
                cloud = sample_stationary_cloud(mu, q, n_points, depth, seed)
                if cache:
                    cloud.save(cache)
        est = local_dimension(cloud, seed=seed)
        est2 = knn_dimension(cloud, k=10, seed=seed)
        if plot:
            _plot_scaling(cloud, plot, seed)
        _emit(out, {
            "local": {"delta": est.delta, "ci": est.ci, "r_range": est.r_range},
            "knn": {"delta": est2.delta, "ci": est2.ci},
        }, cfg)
    except QUALITY_ERRORS as exc:
        _fail(out, {"task": "dim"}, exc, 2)
    except (FurstlabError, ValueError, OSError) as exc:
        _fail(out, {"task": "dim"}, exc, 1)


@measure.command("fibers")
@with_measure_opts
@click.option("--fine", default=None, help="atom lists JSON, default finest")
@click.option("--coarse", default=None, help="atom lists JSON, one step coarser")
@click.option("--n", "n_points", type=int, default=2 * 10 ** 4)
@click.option("--depth", type=int, default=60)
@click.option("--bin-radius", type=float, default=0.2)
def measure_fibers(preset, config, seed, out, threads, fine, coarse,
                   n_points, depth, bin_radius):
    from .clouds import condition_on_projection, sample_config_cloud
    from .pipeline import pooled_gamma

    _set_threads(threads)
    try:
        mu, mcfg = _load_measure(preset, config)
        cfg = {"task": "fibers", "seed": seed, "fine": fine, "coarse": coarse,
               "n": n_points, "depth": depth, "bin_radius": bin_radius, **mcfg}
        t = _parse_topology(fine, mu.d) or AdmissibleTopology.finest(mu.d)
        if coarse is None:
            raise click.UsageError("--coarse is required (one step below --fine)")
        t2 = _parse_topology(coarse, mu.d)
        cloud = sample_config_cloud(mu, t, n_points, depth, seed)
        results = condition_on_projection(cloud, t, t2, bin_radius, seed=seed)
        gamma, ci = pooled_gamma(results)
        _emit(out, {
            "bins": [{"center": c, "count": len(us),
                      "gamma": est.delta, "ci": est.ci}
                     for c, us, est in results],
            "gamma": gamma,
            "gamma_ci": ci,
        }, cfg)
    except QUALITY_ERRORS as exc:
        _fail(out, {"task": "fibers"}, exc, 2)
    except (FurstlabError, ValueError, OSError) as exc:
        _fail(out, {"task": "fibers"}, exc, 1)


# ---------------------------------------------------------------- entropy


@main.group()
def entropy():
    """Entropy estimators."""


@entropy.command("rw")
@with_measure_opts
@click.option("--nmax", type=int, default=12)
def entropy_rw(preset, config, seed, out, threads, nmax):
    from .entropy import rw_entropy

    _set_threads(threads)
    try:
        mu, mcfg = _load_measure(preset, config)
        cfg = {"task": "entropy-rw", "seed": seed, "nmax": nmax, **mcfg}
        est = rw_entropy(mu.without_mollifier(), nmax)
        _emit(out, {
            "h": est.h, "ci": est.ci, "method": est.method,
            "sequence": list(est.sequence),
        }, cfg)
    except QUALITY_ERRORS as exc:
        _fail(out, {"task": "entropy-rw"}, exc, 2)
    except (FurstlabError, ValueError, OSError) as exc:
        _fail(out, {"task": "entropy-rw"}, exc, 1)


@entropy.command("mi")
@with_measure_opts
@click.option("--epsilon", type=float, default=0.1)
@click.option("--partition", default=None)
@click.option("--n", "n_samples", type=int, default=2 * 10 ** 5)
@click.option("--k", type=int, default=4)
def entropy_mi(preset, config, seed, out, threads, epsilon, partition, n_samples, k):
    from .entropy import mollified_mi

    _set_threads(threads)
    try:
        mu, mcfg = _load_measure(preset, config)
        cfg = {"task": "entropy-mi", "seed": seed, "epsilon": epsilon,
               "partition": partition, "n": n_samples, "k": k, **mcfg}
        q = _parse_partition(partition, mu.d)
        mi, rhs, z = mollified_mi(mu, epsilon, q, n_samples, k=k, seed=seed)
        _emit(out, {"mi": mi, "identity_rhs": rhs, "z": z}, cfg)
    except QUALITY_ERRORS as exc:
        _fail(out, {"task": "entropy-mi"}, exc, 2)
    except (FurstlabError, ValueError, OSError) as exc:
        _fail(out, {"task": "entropy-mi"}, exc, 1)


# ---------------------------------------------------------------- lyapdim / report


@main.command("lyapdim")
@with_measure_opts
@click.option("--steps", type=int, default=10 ** 6)
@click.option("--nmax", type=int, default=12)
@click.option("--partition", default=None)
@click.option("--plot", type=click.Path(), default=None)
def lyapdim(preset, config, seed, out, threads, steps, nmax, partition, plot):
    from .entropy import furstenberg_bound, lyapunov_profile, rw_entropy

    _set_threads(threads)
    try:
        mu, mcfg = _load_measure(preset, config)
        cfg = {"task": "lyapdim", "seed": seed, "steps": steps,
               "nmax": nmax, "partition": partition, **mcfg}
        q = _parse_partition(partition, mu.d)
        spec = lyapunov_spectrum(mu, steps, seed)
        h = rw_entropy(mu.without_mollifier(), nmax)
        profile = lyapunov_profile(h, spec, q)
        if plot:
            _plot_profile(profile, plot)
        _emit(out, {
            "spectrum": spec.chi.tolist(),
            "stderr": spec.stderr.tolist(),
            "entropy": {"h": h.h, "ci": h.ci, "method": h.method},
            "bound": furstenberg_bound(spec, q),
            "lyapdim": profile.dim_ly,
            "saturated": profile.saturated,
        }, cfg)
    except QUALITY_ERRORS as exc:
        _fail(out, {"task": "lyapdim"}, exc, 2)
    except (FurstlabError, ValueError, OSError) as exc:
        _fail(out, {"task": "lyapdim"}, exc, 1)


@main.group()
def report():
    """Composite consistency reports."""


@report.command("ly")
@with_measure_opts
@click.option("--steps", type=int, default=10 ** 6)
@click.option("--nmax", type=int, default=12)
@click.option("--n", "n_points", type=int, default=10 ** 5)
@click.option("--depth", type=int, default=60)
@click.option("--bin-radius", type=float, default=0.2)
def report_ly(preset, config, seed, out, threads, steps, nmax, n_points,
              depth, bin_radius):
    from .pipeline import run_ly_pipeline

    _set_threads(threads)
    try:
        mu, mcfg = _load_measure(preset, config)
        cfg = {"task": "report-ly", "seed": seed, "steps": steps, "nmax": nmax,
               "n": n_points, "depth": depth, "bin_radius": bin_radius, **mcfg}
        payload = run_ly_pipeline(
            mu, seed, steps=steps, n_max=nmax, n_points=n_points,
            depth=depth, bin_radius=bin_radius,
        )
        _emit(out, payload, cfg)
    except QUALITY_ERRORS as exc:
        _fail(out, {"task": "report-ly"}, exc, 2)
    except (FurstlabError, ValueError, OSError) as exc:
        _fail(out, {"task": "report-ly"}, exc, 1)


# ---------------------------------------------------------------- plots


def _plot_rate(probe, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots()
    ax.semilogy(probe.depths, probe.distances, "o-", label="measured")
    if probe.slope is not None:
        xs = np.array(probe.depths, dtype=float)
        c0 = np.log(max(probe.distances[0], 1e-300)) - probe.slope * probe.depths[0]
        ax.semilogy(xs, np.exp(probe.slope * xs + c0), "--",
                    label=f"fit slope {probe.slope:.3f}")
    ax.set_xlabel("depth n")
    ax.set_ylabel("configuration distance")
    ax.legend()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_scaling(cloud, path, seed):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from .clouds import DEFAULT_RADII

    rng = np.random.default_rng(seed)
    radii = np.asarray(DEFAULT_RADII)
    fig, ax = plt.subplots()
    for idx in rng.choice(cloud.n, size=min(6, cloud.n), replace=False):
        dvec = cloud.distances_from(int(idx))
        counts = np.searchsorted(np.sort(dvec), radii, side="right")
        mask = counts > 1
        ax.plot(np.log(radii[mask]), np.log(counts[mask] / cloud.n), "o-", alpha=0.6)
    ax.set_xlabel("log r")
    ax.set_ylabel("log mass")
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_profile(profile, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots()
    ks = list(range(len(profile.breakpoints)))
    ax.plot(ks, profile.breakpoints, "o-")
    ax.axhline(0.0, color="gray", lw=0.8)
    ax.axvline(profile.dim_ly, color="red", ls="--", label=f"dim {profile.dim_ly:.3f}")
    ax.set_xlabel("k")
    ax.set_ylabel("D(k)")
    ax.legend()
    fig.savefig(path, format="svg")
    plt.close(fig)


if __name__ == "__main__":
    main()
