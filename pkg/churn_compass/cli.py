"""Command-line interface for Churn Compass.

Every command prints exactly one JSON document on stdout and writes a run
manifest; diagnostics go to stderr.
"""

import logging
import sys
from pathlib import Path
from typing import NoReturn, Optional

import click

from churn_compass import __version__
from churn_compass.amc import (
    apply_choices,
    default_meta_train_config,
    distill_meta_fit,
    ensemble_average,
    select_by_scores,
    select_combined,
    select_conf,
    stack_fit,
    stack_predict,
)
from churn_compass.calibration import (
    apply_temperature,
    calibration_study,
    reliability,
    temperature_fit,
)
from churn_compass.config import ChurnConfig, load_config, train_config_to_dict
from churn_compass.core import bundle_from_arrays
from churn_compass.errors import ChurnCompassError, UsageError
from churn_compass.experiment import METHODS, ChurnExperiment, ExperimentSettings
from churn_compass.formatter import ChoiceFormatter, ReportFormatter
from churn_compass.manifest import RunManifest
from churn_compass.metrics import (
    conf_irreducible_flips,
    flip_decomposition,
    flip_overlap,
    forgetting_events,
)
from churn_compass.models import PredictionBundle, ScoreKind
from churn_compass.scores import (
    avgconf_exact,
    compute_scores,
    knn_avgconf_estimate,
    knn_avgconf_fit,
)
from churn_compass.storage import (
    load_labels,
    load_matrix,
    load_mlp,
    load_series,
    save_labels,
    save_matrix,
    save_meta_model,
    save_mlp,
    save_series,
)
from churn_compass.trainer.datasets import DatasetKind, Dataset, synth_dataset
from churn_compass.trainer.network import predict_logits
from churn_compass.trainer.selfconsistency import self_consistency_run
from churn_compass.trainer.training import NetSpec, OptimizerKind, TrainMode, train

logger = logging.getLogger("churn_compass")

FILE = click.Path(exists=True, dir_okay=False)
SERIES = click.Path(exists=True)
AMC_MODES = ("conf", "avgconf", "combined", "learned", "distill", "scores")


def _fail(e: Exception) -> NoReturn:
    click.echo(f"❌ Error: {e}", err=True)
    sys.exit(getattr(e, "exit_code", 1))


def _emit(report) -> None:
    click.echo(ReportFormatter.to_json(report))


def _close(manifest: RunManifest, manifest_path: Optional[str]) -> None:
    path = manifest.finish().write(manifest_path)
    logger.debug("manifest: %s", path)


def _int_list(ctx, param, value: Optional[str]):
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}")


def _bundle(manifest: RunManifest, base: str, new: str, labels: str) -> PredictionBundle:
    for p in (base, new, labels):
        manifest.add_input(p)
    return bundle_from_arrays(load_matrix(base).data, load_matrix(new).data, load_labels(labels))


def manifest_option(f):
    return click.option(
        "--manifest",
        "manifest_path",
        type=click.Path(dir_okay=False),
        default=None,
        help="Run manifest path (default: .churn-compass/manifest-<command>.json)",
    )(f)


@click.group()
@click.version_option(version=__version__, prog_name="churn-compass")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging on stderr")
def cli(verbose: bool):
    """Churn Compass - measure and reduce prediction churn between model versions."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


@cli.command()
@click.argument("base", type=FILE)
@click.argument("new", type=FILE)
@click.argument("labels", type=FILE)
@manifest_option
def churn(base: str, new: str, labels: str, manifest_path: Optional[str]):
    """Churn, relevant churn and flip counts between two logit files."""
    manifest = RunManifest("churn")
    try:
        bundle = _bundle(manifest, base, new, labels)
        report = flip_decomposition(bundle)
        _close(manifest, manifest_path)
        _emit(report)
    except ChurnCompassError as e:
        _fail(e)


def _need(mode: str, **inputs) -> None:
    missing = [name.replace("_", "-") for name, value in inputs.items() if value is None]
    if missing:
        raise UsageError(f"--mode {mode} needs --{', --'.join(missing)}")


@cli.command()
@click.argument("base", type=FILE)
@click.argument("new", type=FILE)
@click.argument("labels", type=FILE)
@click.option("--mode", type=click.Choice(AMC_MODES), default="conf", show_default=True)
@click.option("--scores", "score_names", default=None, help="Comma-separated score kinds for --mode scores")
@click.option("--base-series", type=SERIES, help="Base checkpoint series over the evaluation set")
@click.option("--new-series", type=SERIES, help="New checkpoint series over the evaluation set")
@click.option("--knn", is_flag=True, help="Estimate AvgConf from validation embeddings")
@click.option("--base-val-series", type=SERIES, help="Base checkpoint series over validation data")
@click.option("--new-val-series", type=SERIES, help="New checkpoint series over validation data")
@click.option("--base-val-emb", type=FILE, help="Base embeddings of validation data")
@click.option("--new-val-emb", type=FILE, help="New embeddings of validation data")
@click.option("--base-emb", type=FILE, help="Base embeddings of the evaluation set")
@click.option("--new-emb", type=FILE, help="New embeddings of the evaluation set")
@click.option("--val-base", type=FILE, help="Base logits on validation data")
@click.option("--val-new", type=FILE, help="New logits on validation data")
@click.option("--val-labels", type=FILE, help="Validation labels")
@click.option("--config", "config_path", type=FILE, help="key = value settings file")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="Write combined logits here")
@click.option("--choices", "choices_path", type=click.Path(dir_okay=False), help="Per-sample choice CSV")
@click.option("--meta-model", "meta_path", type=click.Path(dir_okay=False), help="Write the fitted combiner")
@manifest_option
def amc(
    base, new, labels, mode, score_names, base_series, new_series, knn, base_val_series,
    new_val_series, base_val_emb, new_val_emb, base_emb, new_emb, val_base, val_new,
    val_labels, config_path, seed, output, choices_path, meta_path, manifest_path,
):
    """Combine base and new model outputs to reduce negative flips."""
    manifest = RunManifest("amc", seeds=[seed])
    try:
        cfg = load_config(config_path)
        manifest.config = {"mode": mode, "knn": knn, "amc": cfg.amc.to_dict()}
        bundle = _bundle(manifest, base, new, labels)
        choices = None
        extra = {}
        meta = None

        def avgconf_pair():
            if knn:
                _need(
                    f"{mode} --knn", base_val_series=base_val_series, new_val_series=new_val_series,
                    base_val_emb=base_val_emb, new_val_emb=new_val_emb, base_emb=base_emb, new_emb=new_emb,
                )
                pair = []
                for series_path, val_emb, emb in (
                    (base_val_series, base_val_emb, base_emb),
                    (new_val_series, new_val_emb, new_emb),
                ):
                    for p in (series_path, val_emb, emb):
                        manifest.add_input(p)
                    index = knn_avgconf_fit(
                        load_matrix(val_emb, kind="embeddings"), load_series(series_path), k=cfg.amc.knn_k
                    )
                    pair.append(knn_avgconf_estimate(index, load_matrix(emb, kind="embeddings")))
                return pair[0], pair[1]
            _need(mode, base_series=base_series, new_series=new_series)
            manifest.add_input(base_series)
            manifest.add_input(new_series)
            return avgconf_exact(load_series(base_series)), avgconf_exact(load_series(new_series))

        if mode == "conf":
            choices = select_conf(bundle)
        elif mode in ("avgconf", "combined"):
            avg_b, avg_n = avgconf_pair()
            extra = {"avgconf_base": avg_b.values, "avgconf_new": avg_n.values}
            if mode == "avgconf":
                choices = select_by_scores(bundle, [(avg_b, avg_n)])
            else:
                choices = select_combined(bundle, avg_b, avg_n)
        elif mode == "scores":
            _need(mode, scores=score_names)
            pairs = []
            for name in score_names.split(","):
                try:
                    kind = ScoreKind(name.strip())
                except ValueError:
                    raise UsageError(f"unknown score '{name.strip()}'")
                if kind is ScoreKind.AVGCONF:
                    pairs.append(avgconf_pair())
                else:
                    pairs.append((compute_scores(kind, bundle.base), compute_scores(kind, bundle.new)))
                extra[f"{kind.value}_base"] = pairs[-1][0].values
                extra[f"{kind.value}_new"] = pairs[-1][1].values
            choices = select_by_scores(bundle, pairs)
        else:
            _need(mode, val_base=val_base, val_new=val_new, val_labels=val_labels)
            val_bundle = _bundle(manifest, val_base, val_new, val_labels)
            if mode == "learned":
                meta = stack_fit(val_bundle, folds=cfg.amc.folds, lambda_grid=cfg.amc.lambda_grid, seed=seed)
            else:
                meta = distill_meta_fit(
                    val_bundle,
                    alpha_grid=cfg.amc.alpha_grid,
                    arch=cfg.amc.meta_archs,
                    accuracy_tolerance=cfg.amc.accuracy_tolerance,
                    train_cfg=default_meta_train_config(seed),
                )

        if choices is not None:
            combined = apply_choices(bundle, choices)
        else:
            assert meta is not None
            combined = stack_predict(meta, bundle)

        report = {
            "mode": mode,
            "amc": flip_decomposition(PredictionBundle(bundle.base, combined, bundle.labels)),
            "cold": flip_decomposition(bundle),
            "conf_irreducible_flips": conf_irreducible_flips(bundle),
        }
        if choices is not None:
            report["use_new"] = choices.count_new
            report["use_base"] = len(choices) - choices.count_new
            if mode != "conf":
                report["overlap_with_conf"] = flip_overlap(bundle, choices, select_conf(bundle))
            if choices_path:
                Path(choices_path).write_text(ChoiceFormatter.to_csv(bundle, choices, extra), encoding="utf-8")
                manifest.add_output(choices_path)
        if meta is not None:
            report["meta_model"] = {
                "kind": meta.kind,
                "hyperparameters": meta.hyperparameters,
                "metadata": meta.metadata,
            }
            if meta_path:
                save_meta_model(meta, meta_path)
                manifest.add_output(meta_path)
        if output:
            save_matrix(combined, output)
            manifest.add_output(output)

        _close(manifest, manifest_path)
        _emit(report)
    except ChurnCompassError as e:
        _fail(e)


@cli.command()
@click.argument("logits", type=FILE)
@click.argument("labels", type=FILE)
@click.option("--bins", "n_bins", type=int, default=None, help="Reliability bins (default 15)")
@click.option("--bins-csv", type=click.Path(dir_okay=False), help="Write the calibrated bin table as CSV")
@click.option("--config", "config_path", type=FILE, help="key = value settings file")
@manifest_option
def calibrate(logits, labels, n_bins, bins_csv, config_path, manifest_path):
    """Fit a temperature and report reliability before and after scaling."""
    manifest = RunManifest("calibrate")
    try:
        cfg = load_config(config_path, {"n_bins": n_bins})
        n_bins = cfg.amc.n_bins
        manifest.config = {"n_bins": n_bins}
        manifest.add_input(logits)
        manifest.add_input(labels)
        z = load_matrix(logits)
        y = load_labels(labels)
        fit = temperature_fit(z, y)
        before = reliability(z, y, n_bins)
        after = reliability(apply_temperature(z, fit.temperature), y, n_bins)
        if bins_csv:
            rows = [(b.lower, b.upper, b.count, b.mean_confidence, b.empirical_accuracy) for b in after.bins]
            Path(bins_csv).write_text(
                ReportFormatter.to_csv(("lower", "upper", "count", "mean_confidence", "empirical_accuracy"), rows),
                encoding="utf-8",
            )
            manifest.add_output(bins_csv)
        _close(manifest, manifest_path)
        _emit({"temperature": fit, "before": before, "after": after})
    except ChurnCompassError as e:
        _fail(e)


@cli.command("calibration-study")
@click.argument("val_base", type=FILE)
@click.argument("val_new", type=FILE)
@click.argument("val_labels", type=FILE)
@click.argument("test_base", type=FILE)
@click.argument("test_new", type=FILE)
@click.argument("test_labels", type=FILE)
@click.option("--bins", "n_bins", type=int, default=15, show_default=True)
@manifest_option
def calibration_study_cmd(val_base, val_new, val_labels, test_base, test_new, test_labels, n_bins, manifest_path):
    """Per-model temperature scaling and its effect on Conf selection."""
    manifest = RunManifest("calibration-study", config={"n_bins": n_bins})
    try:
        val = _bundle(manifest, val_base, val_new, val_labels)
        test = _bundle(manifest, test_base, test_new, test_labels)
        study = calibration_study(val, test, n_bins)
        _close(manifest, manifest_path)
        _emit(study)
    except ChurnCompassError as e:
        _fail(e)


def _dataset(manifest: RunManifest, dataset: str, n: int, classes: int, seed: int, features, labels) -> Dataset:
    if dataset == DatasetKind.FILE.value:
        _need("file dataset", features=features, labels=labels)
        manifest.add_input(features)
        manifest.add_input(labels)
    return synth_dataset(
        dataset, n, seed=seed, num_classes=classes, features_path=features, labels_path=labels
    )


@cli.command()
@click.option("--dataset", type=click.Choice([k.value for k in DatasetKind]), default="blobs", show_default=True)
@click.option("--features", type=FILE, help="Feature matrix for --dataset file")
@click.option("--labels", type=FILE, help="Labels for --dataset file")
@click.option("--n", "n", type=int, default=200, show_default=True)
@click.option("--classes", type=int, default=2, show_default=True)
@click.option("--constrained", is_flag=True, help="Project every step onto the compatible cone")
@click.option("--unit-norm", is_flag=True, help="Scale every step to unit length")
@click.option("--epochs", type=int, default=2000, show_default=True)
@click.option("--lr", type=float, default=0.0005, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--hidden", default="32,32", show_default=True, callback=_int_list)
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), help="Write the per-epoch trace CSV")
@manifest_option
def selfconsistency(dataset, features, labels, n, classes, constrained, unit_norm, epochs, lr, seed, hidden, trace_path, manifest_path):
    """Full-batch training that tracks negative flips and incompatible gradients."""
    manifest = RunManifest(
        "selfconsistency",
        seeds=[seed],
        config={
            "dataset": dataset, "n": n, "classes": classes, "constrained": constrained,
            "unit_norm": unit_norm, "epochs": epochs, "lr": lr, "hidden": hidden,
        },
    )
    try:
        data = _dataset(manifest, dataset, n, classes, seed, features, labels)
        spec = NetSpec.for_data(data, tuple(hidden))
        trace = self_consistency_run(
            data, spec, lr=lr, epochs=epochs, constrained=constrained, unit_norm=unit_norm, seed=seed
        )
        if trace_path:
            Path(trace_path).write_text(trace.to_csv(), encoding="utf-8")
            manifest.add_output(trace_path)
        _close(manifest, manifest_path)
        _emit(trace.summary())
    except ChurnCompassError as e:
        _fail(e)


@cli.command("train")
@click.argument("features", type=FILE)
@click.argument("labels", type=FILE)
@click.option("--mode", type=click.Choice([m.value for m in TrainMode]), default=None, help="Default: cold")
@click.option("--alpha", type=float, default=None)
@click.option("--epsilon", type=float, default=None, help="Focal target scale (default 1)")
@click.option("--base", "base_path", type=FILE, help="Base model blob (warm start, or to derive base logits)")
@click.option("--base-logits", type=FILE, help="Base logits on the training set (distill/focal)")
@click.option("--optimizer", type=click.Choice([o.value for o in OptimizerKind]), default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--patience", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--hidden", default=None, callback=_int_list, help="Hidden widths, e.g. 32,32")
@click.option("--unit-norm", is_flag=True)
@click.option("--constrained", is_flag=True)
@click.option("--classes", type=int, default=None, help="Class count (default: max label + 1)")
@click.option("--monitor-features", type=FILE, help="Record checkpoints on this set instead")
@click.option("--monitor-labels", type=FILE)
@click.option("--config", "config_path", type=FILE, help="key = value settings file")
@click.option("--model-out", type=click.Path(dir_okay=False), default="model.mlp", show_default=True)
@click.option("--checkpoints", type=click.Path(file_okay=False), default="checkpoints", show_default=True)
@manifest_option
def train_cmd(
    features, labels, mode, alpha, epsilon, base_path, base_logits, optimizer, lr, batch_size,
    epochs, patience, seed, hidden, unit_norm, constrained, classes, monitor_features,
    monitor_labels, config_path, model_out, checkpoints, manifest_path,
):
    """Train an MLP with the cold, warm-start, distillation or focal recipe."""
    manifest = RunManifest("train")
    try:
        overrides = {
            "mode": TrainMode(mode) if mode else None,
            "alpha": alpha,
            "epsilon": epsilon,
            "optimizer": OptimizerKind(optimizer) if optimizer else None,
            "lr": lr,
            "batch_size": batch_size,
            "epochs": epochs,
            "patience": patience,
            "seed": seed,
            "hidden": tuple(hidden) if hidden else None,
            "unit_norm": unit_norm or None,
            "constrained": constrained or None,
        }
        cfg: ChurnConfig = load_config(config_path, overrides)
        tc = cfg.train
        manifest.config = train_config_to_dict(tc)
        manifest.seeds = [tc.seed]
        manifest.add_input(features)
        manifest.add_input(labels)

        x = load_matrix(features, kind="embeddings").data
        y = load_labels(labels)
        k = classes or max(int(y.labels.max()) + 1, 2)
        data = Dataset(x, y, k)
        monitor = None
        if monitor_features or monitor_labels:
            _need("train", monitor_features=monitor_features, monitor_labels=monitor_labels)
            manifest.add_input(monitor_features)
            manifest.add_input(monitor_labels)
            monitor = Dataset(load_matrix(monitor_features, kind="embeddings").data, load_labels(monitor_labels), k)

        base_net = None
        if base_path:
            manifest.add_input(base_path)
            base_net = load_mlp(base_path)
        soft_logits = None
        if tc.mode in (TrainMode.DISTILL, TrainMode.FOCAL):
            if base_logits:
                manifest.add_input(base_logits)
                soft_logits = load_matrix(base_logits)
            elif base_net is not None:
                soft_logits = predict_logits(base_net, x)
            else:
                raise UsageError(f"--mode {tc.mode.value} needs --base-logits or --base")
        elif tc.mode is TrainMode.WARM_START and base_net is None:
            raise UsageError("--mode warm needs --base")

        spec = NetSpec.for_data(data, tc.hidden)
        result = train(data, spec, tc, base=base_net, base_logits=soft_logits, monitor=monitor)
        save_mlp(result.net, model_out)
        series_dir = save_series(result.series, checkpoints)
        manifest.add_output(model_out)
        manifest.add_output(series_dir)
        last = result.history[-1]
        _close(manifest, manifest_path)
        _emit(
            {
                "mode": tc.mode,
                "epochs_run": len(result.history),
                "best_epoch": result.best_epoch,
                "final_loss": last["loss"],
                "train_accuracy": last["train_accuracy"],
                "monitor_accuracy": last["monitor_accuracy"],
                "model": model_out,
                "checkpoints": str(series_dir),
            }
        )
    except ChurnCompassError as e:
        _fail(e)


@cli.command()
@click.option("--base-member", "base_members", type=FILE, multiple=True, required=True)
@click.option("--new-member", "new_members", type=FILE, multiple=True, required=True)
@click.option("--labels", type=FILE, required=True)
@click.option("--base-out", type=click.Path(dir_okay=False), help="Write the averaged base logits")
@click.option("--new-out", type=click.Path(dir_okay=False), help="Write the averaged new logits")
@manifest_option
def ensemble(base_members, new_members, labels, base_out, new_out, manifest_path):
    """Average member logits per side and measure flips between the two ensembles."""
    manifest = RunManifest("ensemble", config={"base_members": len(base_members), "new_members": len(new_members)})
    try:
        for p in (*base_members, *new_members, labels):
            manifest.add_input(p)
        ens_b = ensemble_average([load_matrix(p) for p in base_members])
        ens_n = ensemble_average([load_matrix(p) for p in new_members])
        report = flip_decomposition(PredictionBundle(ens_b, ens_n, load_labels(labels)))
        for matrix, path in ((ens_b, base_out), (ens_n, new_out)):
            if path:
                save_matrix(matrix, path)
                manifest.add_output(path)
        _close(manifest, manifest_path)
        _emit(report)
    except ChurnCompassError as e:
        _fail(e)


@cli.command()
@click.option("--seeds", default="0", show_default=True, callback=_int_list, help="Comma-separated seeds")
@click.option("--methods", default=None, help=f"Comma-separated subset of: {', '.join(METHODS)}")
@click.option("--classes", type=int, default=5, show_default=True)
@click.option("--epochs", type=int, default=40, show_default=True)
@click.option("--ensemble-size", type=int, default=3, show_default=True)
@click.option("--config", "config_path", type=FILE, help="key = value settings file")
@manifest_option
def compare(seeds, methods, classes, epochs, ensemble_size, config_path, manifest_path):
    """Desk-scale comparison of churn-reduction methods over several seeds."""
    manifest = RunManifest("compare", seeds=list(seeds))
    try:
        cfg = load_config(config_path)
        chosen = tuple(m.strip() for m in methods.split(",")) if methods else METHODS
        settings = ExperimentSettings(
            num_classes=classes, epochs=epochs, ensemble_size=ensemble_size, methods=chosen
        )
        manifest.config = {"settings": settings.to_dict(), "amc": cfg.amc.to_dict()}
        experiment = ChurnExperiment(settings, cfg.amc)
        report = experiment.run(seeds, progress=lambda s: logger.info("seed %d", s))
        _close(manifest, manifest_path)
        _emit(report)
    except ChurnCompassError as e:
        _fail(e)


@cli.command()
@click.argument("series", type=SERIES)
@click.argument("labels", type=FILE)
@manifest_option
def forgetting(series, labels, manifest_path):
    """Forgetting events per sample across a checkpoint series."""
    manifest = RunManifest("forgetting")
    try:
        manifest.add_input(series)
        manifest.add_input(labels)
        record = forgetting_events(load_series(series), load_labels(labels))
        _close(manifest, manifest_path)
        _emit(record)
    except ChurnCompassError as e:
        _fail(e)


@cli.command()
@click.option("--dataset", type=click.Choice(["blobs", "spirals"]), default="blobs", show_default=True)
@click.option("--n", "n", type=int, default=200, show_default=True)
@click.option("--classes", type=int, default=2, show_default=True)
@click.option("--dims", type=int, default=2, show_default=True)
@click.option("--cluster-std", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--features-out", type=click.Path(dir_okay=False), default="features.lgt", show_default=True)
@click.option("--labels-out", type=click.Path(dir_okay=False), default="labels.lbl", show_default=True)
@manifest_option
def synth(dataset, n, classes, dims, cluster_std, seed, features_out, labels_out, manifest_path):
    """Write a synthetic dataset as a feature matrix and a label file."""
    manifest = RunManifest(
        "synth",
        seeds=[seed],
        config={"dataset": dataset, "n": n, "classes": classes, "dims": dims, "cluster_std": cluster_std},
    )
    try:
        data = synth_dataset(dataset, n, seed=seed, num_classes=classes, dims=dims, cluster_std=cluster_std)
        save_matrix(data.features, features_out)
        save_labels(data.labels, labels_out)
        manifest.add_output(features_out)
        manifest.add_output(labels_out)
        _close(manifest, manifest_path)
        _emit({"n": data.n, "dims": data.dims, "classes": data.num_classes, "features": features_out, "labels": labels_out})
    except ChurnCompassError as e:
        _fail(e)


if __name__ == "__main__":
    cli()
