"""Command-line interface.

Exit codes: 0 success, 2 input error (missing/bad files, bad pairs, empty
manifests), 3 pipeline error. All randomness flows from --seed into the
intervention spec, so reruns with equal flags are reproducible, including
under --threads N.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import datasets as ds
from .backbone import BackboneSpec, extract_features_for_bytes, load_backbone
from .confounder import (
    ScreeningConfig,
    complement,
    load_dictionary,
    save_dictionary,
    screen_channels,
)
from .errors import EmptyManifest, InputError, PipelineError
from .estimator import PairScorer
from .intervention import (
    InterventionSpec,
    apply_intervention,
    calibrate_stage_scales,
    sweep,
)
from .metrics import evaluate, write_scatter_csv
from .scoring import ScoringConfig, predict_quality
from .transport import DistanceConfig

_MODE_NAMES = {"theta": "theta_all", "gamma": "gamma_causal", "eta": "eta_complement"}


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def exit_codes(fn):
    """Map exception families onto the CLI exit-code contract."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (InputError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
            _fail(2, f"{type(exc).__name__}: {exc}")
        except PipelineError as exc:
            _fail(3, f"{type(exc).__name__}: {exc}")
        except OSError as exc:
            _fail(2, f"{type(exc).__name__}: {exc}")
    return wrapper


def _load_handle(graph, spec):
    spec_path = spec or str(Path(graph).with_suffix("")) + ".spec.json"
    return load_backbone(graph, BackboneSpec.from_json(spec_path))


def _intervention(path, seed):
    ispec = InterventionSpec.from_json(path) if path else InterventionSpec()
    if seed is not None:
        ispec = InterventionSpec(kind=ispec.kind, intensity_grid=ispec.intensity_grid,
                                 draws_per_intensity=ispec.draws_per_intensity,
                                 master_seed=seed, stage_scales=ispec.stage_scales)
    return ispec


def _load_manifest(path):
    manifest = ds.load_csv_manifest(path)
    return ds.normalize_mos(manifest)


def common_options(fn):
    fn = click.option("--graph", required=True, type=click.Path(), help="ONNX backbone graph")(fn)
    fn = click.option("--spec", "spec_path", type=click.Path(),
                      help="backbone spec sidecar (default: <graph>.spec.json)")(fn)
    fn = click.option("--metric", default="wasserstein2",
                      type=click.Choice(["wasserstein2", "wasserstein1", "mean_abs_diff"]))(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="master seed for all randomness")(fn)
    fn = click.option("--threads", type=int, default=1, show_default=True)(fn)
    return fn


@click.group()
def main():
    """Training-free full-reference IQA with causal channel screening."""


@main.command()
@click.argument("ref", type=click.Path())
@click.argument("dist", type=click.Path())
@common_options
@click.option("--dict", "dict_path", type=click.Path(), help="confounder dictionary file")
@click.option("--mode", default="gamma", type=click.Choice(sorted(_MODE_NAMES)),
              show_default=True)
@click.option("--emit", default="summary", type=click.Choice(["summary", "per-channel"]),
              show_default=True)
@click.option("--tsv", is_flag=True, help="one-line TSV instead of JSON")
@click.option("--out", type=click.Path(), help="write output here instead of stdout")
@exit_codes
def score(ref, dist, graph, spec_path, metric, seed, threads, dict_path, mode,
          emit, tsv, out):
    """Score one reference/distorted pair (lower = better quality)."""
    handle = _load_handle(graph, spec_path)
    mode = _MODE_NAMES[mode]
    dictionary = None
    if dict_path:
        dictionary = load_dictionary(dict_path, expected_backbone=handle.spec.id)
    elif mode != "theta_all":
        raise InputError(f"mode {mode} requires --dict")
    cfg = ScoringConfig(ablation_mode=mode,
                        distance=DistanceConfig(per_channel_metric=metric))
    if emit == "per-channel":
        scorer = PairScorer(handle, dictionary, mode=mode, distance=cfg.distance)
        result = scorer.score_pair(ref, dist)
        doc = result.to_dict(include_channels=True)
        doc.update({"mode": mode, "backbone_id": handle.spec.id, "value": result.total})
    else:
        q = predict_quality(Path(ref).read_bytes(), Path(dist).read_bytes(),
                            handle, dictionary, cfg)
        doc = q.to_dict()
    text = (f"{doc['value']:.9g}\t{doc['mode']}\t{doc['backbone_id']}"
            if tsv else json.dumps(doc, indent=2))
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        click.echo(text)


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(),
              help="calibration manifest CSV")
@common_options
@click.option("--out", required=True, type=click.Path(), help="dictionary output path")
@click.option("--intervention", "intervention_path", type=click.Path(),
              help="intervention spec JSON (default: additive gaussian grid)")
@click.option("--tau-rel", type=float, default=0.05, show_default=True)
@click.option("--rule", default="all_intensities",
              type=click.Choice(["all_intensities", "majority"]), show_default=True)
@click.option("--min-baseline", type=float, default=1e-8, show_default=True)
@exit_codes
def screen(manifest_path, graph, spec_path, metric, seed, threads, out,
           intervention_path, tau_rel, rule, min_baseline):
    """Build a confounder dictionary from a calibration manifest."""
    handle = _load_handle(graph, spec_path)
    manifest = _load_manifest(manifest_path)
    ispec = _intervention(intervention_path, seed)
    dist_cfg = DistanceConfig(per_channel_metric=metric)

    pair_stacks = []
    stacks = []
    for rec in manifest.records:
        f_ref = extract_features_for_bytes(handle, Path(rec.ref_path).read_bytes())
        f_dst = extract_features_for_bytes(handle, Path(rec.dist_path).read_bytes())
        pair_stacks.append((f_ref, f_dst))
        stacks.extend((f_ref, f_dst))
    if ispec.stage_scales is None:
        ispec = calibrate_stage_scales(ispec, stacks)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda ab: sweep(ab[0], ab[1], ispec, dist_cfg),
                                     pair_stacks))
    else:
        outcomes = [sweep(a, b, ispec, dist_cfg) for a, b in pair_stacks]

    cfg = ScreeningConfig(tau_rel=tau_rel, rule=rule, min_baseline=min_baseline,
                          calibration_pairs=len(manifest.records))
    d = screen_channels(outcomes, cfg, backbone_id=handle.spec.id)
    save_dictionary(d, out)
    n_causal = d.n_causal()
    total = sum(d.channel_counts())
    click.echo(f"screened {total} channels -> {n_causal} causal "
               f"({manifest_path}, tau_rel={tau_rel}, rule={rule})", err=True)
    if n_causal == 0:
        click.echo("warning: dictionary is empty; gamma-mode scoring will fail",
                   err=True)
    elif n_causal < max(1, total // 20):
        click.echo("warning: fewer than 5% of channels passed screening", err=True)


def _benchmark_reports(manifest, handle, dictionary, modes, metric, threads,
                       oracle=False):
    reports = {}
    memoize = {r.ref_path for r in manifest.records}
    for mode in modes:
        if oracle:
            scorer = lambda ref, dist: next(
                -rec.mos_norm for rec in manifest.records
                if rec.ref_path == ref and rec.dist_path == dist)
        else:
            scorer = PairScorer(handle, dictionary, mode=mode,
                                distance=DistanceConfig(per_channel_metric=metric),
                                memoize=memoize)
        reports[mode] = evaluate(manifest, scorer, lower_better_score=True,
                                 n_jobs=threads, return_pairs=True)
    return reports


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@common_options
@click.option("--dict", "dict_path", type=click.Path())
@click.option("--mode", default="gamma", type=click.Choice(sorted(_MODE_NAMES)),
              show_default=True)
@click.option("--out", required=True, type=click.Path(), help="output directory")
@click.option("--tsv", is_flag=True, help="also print a one-line TSV summary")
@click.option("--oracle-scorer", is_flag=True, hidden=True,
              help="debug: score each pair with its own normalized MOS")
@exit_codes
def benchmark(manifest_path, graph, spec_path, metric, seed, threads, dict_path,
              mode, out, tsv, oracle_scorer):
    """Evaluate the scorer against a manifest; writes report + scatter CSV."""
    manifest = _load_manifest(manifest_path)
    handle = _load_handle(graph, spec_path)
    mode = _MODE_NAMES[mode]
    dictionary = None
    if dict_path:
        dictionary = load_dictionary(dict_path, expected_backbone=handle.spec.id)
    elif mode != "theta_all" and not oracle_scorer:
        raise InputError(f"mode {mode} requires --dict")
    reports = _benchmark_reports(manifest, handle, dictionary, [mode], metric,
                                 threads, oracle=oracle_scorer)
    report, pairs = reports[mode]
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc.update({"manifest": str(manifest_path), "mode": mode,
                "backbone_id": handle.spec.id, "metric": metric})
    (out_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    write_scatter_csv(pairs, out_dir / "scatter.csv")
    click.echo(json.dumps(doc, indent=2, sort_keys=True))
    if tsv:
        click.echo(report.to_tsv(label=mode))


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@common_options
@click.option("--dict", "dict_path", required=True, type=click.Path())
@click.option("--out", type=click.Path(), help="output directory for the three reports")
@click.option("--tsv", is_flag=True)
@click.option("--emit", default="summary", type=click.Choice(["summary", "per-channel"]))
@exit_codes
def ablate(manifest_path, graph, spec_path, metric, seed, threads, dict_path,
           out, tsv, emit):
    """Benchmark all three ablation modes (full / causal / complement)."""
    manifest = _load_manifest(manifest_path)
    handle = _load_handle(graph, spec_path)
    dictionary = load_dictionary(dict_path, expected_backbone=handle.spec.id)
    modes = ["theta_all", "gamma_causal", "eta_complement"]
    reports = _benchmark_reports(manifest, handle, dictionary, modes, metric, threads)
    table = {}
    for mode in modes:
        report, pairs = reports[mode]
        table[mode] = report.to_dict()
        if out:
            out_dir = Path(out)
            out_dir.mkdir(parents=True, exist_ok=True)
            write_scatter_csv(pairs, out_dir / f"scatter_{mode}.csv")
    if emit == "per-channel":
        gamma = load_dictionary(dict_path)
        eta = complement(gamma)
        table["channel_partition"] = {
            "gamma_channels": [int(np.count_nonzero(w)) for w in gamma.weights],
            "eta_channels": [int(np.count_nonzero(w)) for w in eta.weights],
            "total_channels": list(gamma.channel_counts()),
        }
    if out:
        (Path(out) / "ablation.json").write_text(
            json.dumps(table, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(json.dumps(table, indent=2, sort_keys=True))
    if tsv:
        for mode in modes:
            r = table[mode]
            click.echo(f"{mode}\t{r['plcc']:.6f}\t{r['srcc']:.6f}\t{r['n_pairs']}")


@main.command("export-scatter")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@common_options
@click.option("--dict", "dict_path", type=click.Path())
@click.option("--mode", default="gamma", type=click.Choice(sorted(_MODE_NAMES)))
@click.option("--out", required=True, type=click.Path(), help="scatter CSV path")
@exit_codes
def export_scatter(manifest_path, graph, spec_path, metric, seed, threads,
                   dict_path, mode, out):
    """Write per-pair (mos_norm, mapped_pred) rows for scatter plots."""
    manifest = _load_manifest(manifest_path)
    handle = _load_handle(graph, spec_path)
    mode = _MODE_NAMES[mode]
    dictionary = None
    if dict_path:
        dictionary = load_dictionary(dict_path, expected_backbone=handle.spec.id)
    elif mode != "theta_all":
        raise InputError(f"mode {mode} requires --dict")
    reports = _benchmark_reports(manifest, handle, dictionary, [mode], metric, threads)
    _, pairs = reports[mode]
    write_scatter_csv(pairs, out)
    click.echo(f"wrote {len(pairs)} rows to {out}", err=True)


@main.command("export-maps")
@click.argument("ref", type=click.Path())
@click.argument("dist", type=click.Path())
@common_options
@click.option("--stages", default="", help="1-based stage indices, e.g. 2,4,5 (default all)")
@click.option("--intervention", "intervention_path", type=click.Path())
@click.option("--intensity-index", type=int, default=None,
              help="grid index to visualize (default: last)")
@click.option("--out", required=True, type=click.Path(), help="output directory")
@exit_codes
def export_maps(ref, dist, graph, spec_path, metric, seed, threads, stages,
                intervention_path, intensity_index, out):
    """Write grayscale per-channel maps of |intervened - original| activations.

    Maps are computed on the distorted image's features and min-max
    normalized per image; filenames encode stage and channel.
    """
    handle = _load_handle(graph, spec_path)
    ispec = _intervention(intervention_path, seed)
    f_dist = extract_features_for_bytes(handle, Path(dist).read_bytes())
    f_ref = extract_features_for_bytes(handle, Path(ref).read_bytes())
    if [s.shape for s in f_ref.stages] != [s.shape for s in f_dist.stages]:
        raise InputError("reference and distorted images have different dimensions")
    if ispec.stage_scales is None:
        ispec = calibrate_stage_scales(ispec, [f_ref, f_dist])
    k = intensity_index if intensity_index is not None else len(ispec.intensity_grid) - 1
    fp_dist = apply_intervention(f_dist, ispec, k, 0)
    n_stages = len(f_dist.stages)
    if stages.strip():
        wanted = sorted({int(tok) for tok in stages.split(",") if tok.strip()})
        for s in wanted:
            if not 1 <= s <= n_stages:
                raise InputError(f"stage {s} out of range 1..{n_stages}")
    else:
        wanted = list(range(1, n_stages + 1))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for s in wanted:
        delta = np.abs(fp_dist.stages[s - 1] - f_dist.stages[s - 1])
        for c in range(delta.shape[0]):
            m = delta[c]
            span = float(m.max() - m.min())
            if span > 0:
                m = (m - m.min()) / span
            else:
                m = np.zeros_like(m)
            img = (m * 255).astype(np.uint8)
            Image.fromarray(img, mode="L").save(
                out_dir / f"stage{s}_ch{c:04d}.png")
            count += 1
    click.echo(f"wrote {count} channel maps to {out_dir}", err=True)


@main.command()
@click.option("--out", required=True, type=click.Path(), help="corpus directory")
@click.option("--refs", type=int, default=6, show_default=True)
@click.option("--size", type=int, default=96, show_default=True)
@click.option("--kinds", default="gaussian_blur,additive_noise,quantize",
              show_default=True)
@click.option("--levels", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@exit_codes
def corpus(out, refs, size, kinds, levels, seed):
    """Generate the synthetic desk corpus (references + distortions + manifest)."""
    out_dir = Path(out)
    ref_paths = ds.write_demo_references(out_dir / "refs", n=refs,
                                         size=(size, size), seed=seed)
    kind_list = [k.strip() for k in kinds.split(",") if k.strip()]
    manifest = ds.synth_corpus(ref_paths, kind_list, levels, out_dir / "corpus",
                               seed=seed)
    ds.save_csv_manifest(manifest, out_dir / "manifest.csv")
    click.echo(f"wrote {len(manifest)} pairs under {out_dir}", err=True)


if __name__ == "__main__":
    main()
