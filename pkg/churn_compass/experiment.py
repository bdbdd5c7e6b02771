"""Desk-scale comparison of churn-reduction methods on synthetic data."""

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .amc import (
    Candidate,
    apply_choices,
    default_meta_train_config,
    distill_meta_fit,
    ensemble_average,
    select_at_accuracy_floor,
    select_by_scores,
    select_combined,
    select_conf,
    stack_fit,
    stack_predict,
)
from .config import AmcSettings
from .errors import UsageError
from .metrics import flip_decomposition
from .models import CheckpointSeries, LogitMatrix, PredictionBundle
from .scores import avgconf_exact, knn_avgconf_estimate, knn_avgconf_fit
from .trainer.datasets import Dataset, DatasetKind, split_dataset, synth_dataset
from .trainer.network import embed, predict_logits
from .trainer.training import NetSpec, OptimizerKind, TrainConfig, TrainMode, TrainResult, train

logger = logging.getLogger(__name__)

METHODS = (
    "cold",
    "warm_start",
    "distillation",
    "ensemble",
    "amc_conf",
    "amc_avgconf",
    "amc_avgconf_knn",
    "amc_combined",
    "amc_learned",
    "amc_distill",
)


@dataclass(frozen=True)
class ExperimentSettings:
    """Dataset split sizes and training recipe for one comparison."""
    n_train: int = 600
    n_update: int = 400
    n_val: int = 500
    n_test: int = 1000
    num_classes: int = 5
    dims: int = 2
    cluster_std: float = 1.6
    spread: float = 4.0
    hidden: tuple[int, ...] = (32, 32)
    epochs: int = 40
    lr: float = 0.005
    batch_size: int = 32
    ensemble_size: int = 3
    distill_alphas: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    methods: tuple[str, ...] = METHODS

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MethodResult:
    accuracy: float
    relevant_churn: float
    churn: float

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "relevant_churn": self.relevant_churn, "churn": self.churn}


@dataclass
class ExperimentReport:
    settings: ExperimentSettings
    seeds: list[int] = field(default_factory=list)
    per_seed: dict[int, dict[str, MethodResult]] = field(default_factory=dict)

    def summary(self) -> dict[str, dict]:
        out = {}
        methods = [m for m in METHODS if any(m in r for r in self.per_seed.values())]
        for m in methods:
            rows = [r[m] for r in self.per_seed.values() if m in r]
            acc = np.array([r.accuracy for r in rows])
            rel = np.array([r.relevant_churn for r in rows])
            out[m] = {
                "accuracy_mean": float(acc.mean()),
                "accuracy_std": float(acc.std()),
                "relevant_churn_mean": float(rel.mean()),
                "relevant_churn_std": float(rel.std()),
                "runs": len(rows),
            }
        return out

    def to_dict(self) -> dict:
        return {
            "settings": self.settings.to_dict(),
            "seeds": list(self.seeds),
            "summary": self.summary(),
            "per_seed": {
                str(seed): {m: r.to_dict() for m, r in results.items()}
                for seed, results in self.per_seed.items()
            },
        }


class ChurnExperiment:
    """Train base and new models on nested data and compare churn-reduction methods."""

    def __init__(self, settings: Optional[ExperimentSettings] = None, amc: Optional[AmcSettings] = None):
        self.settings = settings or ExperimentSettings()
        self.amc = amc or AmcSettings()
        unknown = set(self.settings.methods) - set(METHODS)
        if unknown:
            raise UsageError(f"unknown methods: {', '.join(sorted(unknown))}")

    def _config(self, seed: int, **changes) -> TrainConfig:
        s = self.settings
        return TrainConfig(
            optimizer=OptimizerKind.ADAM,
            lr=s.lr,
            batch_size=s.batch_size,
            epochs=s.epochs,
            seed=seed,
            hidden=s.hidden,
        ).with_overrides(**changes)

    def _splits(self, seed: int) -> tuple[Dataset, Dataset, Dataset, Dataset]:
        s = self.settings
        sizes = [s.n_train, s.n_update, s.n_val, s.n_test]
        data = synth_dataset(
            DatasetKind.BLOBS,
            sum(sizes),
            seed=seed,
            num_classes=s.num_classes,
            dims=s.dims,
            cluster_std=s.cluster_std,
            spread=s.spread,
        )
        train_set, update, val, test = split_dataset(data, sizes, seed=seed)
        return train_set, train_set.concat(update), val, test

    def run_seed(self, seed: int) -> dict[str, MethodResult]:
        s = self.settings
        want = set(s.methods)
        train_set, full, val, test = self._splits(seed)
        spec = NetSpec.for_data(train_set, s.hidden)
        monitor = val.concat(test)
        n_val = val.n

        def fit(data: Dataset, seed_: int) -> TrainResult:
            return train(data, spec, self._config(seed_), monitor=monitor)

        base = fit(train_set, seed)
        new = fit(full, seed + 1)

        def logits(result: TrainResult, data: Dataset) -> LogitMatrix:
            return predict_logits(result.net, data.features)

        base_val, base_test = logits(base, val), logits(base, test)
        new_val, new_test = logits(new, val), logits(new, test)
        test_bundle = PredictionBundle(base_test, new_test, test.labels)
        val_bundle = PredictionBundle(base_val, new_val, val.labels)

        results: dict[str, MethodResult] = {}

        def record(name: str, output: LogitMatrix, reference: LogitMatrix = base_test) -> None:
            report = flip_decomposition(PredictionBundle(reference, output, test.labels))
            results[name] = MethodResult(report.accuracy_new, report.relevant_churn, report.churn)
            logger.debug(
                "seed %d %s: accuracy %.4f, relevant churn %.4f",
                seed, name, report.accuracy_new, report.relevant_churn,
            )

        record("cold", new_test)

        if "warm_start" in want:
            warm = train(full, spec, self._config(seed + 1, mode=TrainMode.WARM_START), base=base.net, monitor=monitor)
            record("warm_start", logits(warm, test))

        if "distillation" in want:
            soft_logits = predict_logits(base.net, full.features)
            cold_val_acc = flip_decomposition(val_bundle).accuracy_new
            candidates, outputs = [], []
            for alpha in s.distill_alphas:
                res = train(
                    full, spec, self._config(seed + 1, mode=TrainMode.DISTILL, alpha=alpha),
                    base_logits=soft_logits, monitor=monitor,
                )
                rep = flip_decomposition(PredictionBundle(base_val, logits(res, val), val.labels))
                candidates.append(Candidate({"alpha": alpha}, rep.accuracy_new, rep.relevant_churn))
                outputs.append(logits(res, test))
            chosen = select_at_accuracy_floor(candidates, cold_val_acc)
            record("distillation", outputs[candidates.index(chosen)])

        if "ensemble" in want:
            bases = [base] + [fit(train_set, seed + 100 * m) for m in range(1, s.ensemble_size)]
            news = [new] + [fit(full, seed + 100 * m + 1) for m in range(1, s.ensemble_size)]
            ens_base = ensemble_average([logits(r, test) for r in bases])
            ens_new = ensemble_average([logits(r, test) for r in news])
            record("ensemble", ens_new, reference=ens_base)

        if "amc_conf" in want:
            record("amc_conf", apply_choices(test_bundle, select_conf(test_bundle)))

        test_rows = np.arange(n_val, monitor.n)
        val_rows = np.arange(n_val)
        avg_b = avgconf_exact(base.series.select_rows(test_rows))
        avg_n = avgconf_exact(new.series.select_rows(test_rows))
        if "amc_avgconf" in want:
            record("amc_avgconf", apply_choices(test_bundle, select_by_scores(test_bundle, [(avg_b, avg_n)])))
        if "amc_combined" in want:
            record("amc_combined", apply_choices(test_bundle, select_combined(test_bundle, avg_b, avg_n)))

        if "amc_avgconf_knn" in want:

            def knn_scores(result: TrainResult, series: CheckpointSeries):
                index = knn_avgconf_fit(embed(result.net, val.features), series, k=self.amc.knn_k)
                return knn_avgconf_estimate(index, embed(result.net, test.features))

            est_b = knn_scores(base, base.series.select_rows(val_rows))
            est_n = knn_scores(new, new.series.select_rows(val_rows))
            record("amc_avgconf_knn", apply_choices(test_bundle, select_by_scores(test_bundle, [(est_b, est_n)])))

        if "amc_learned" in want:
            meta = stack_fit(val_bundle, folds=self.amc.folds, lambda_grid=self.amc.lambda_grid, seed=seed)
            record("amc_learned", stack_predict(meta, test_bundle))

        if "amc_distill" in want:
            meta = distill_meta_fit(
                val_bundle,
                alpha_grid=self.amc.alpha_grid,
                arch=self.amc.meta_archs,
                accuracy_tolerance=self.amc.accuracy_tolerance,
                train_cfg=default_meta_train_config(seed),
            )
            record("amc_distill", stack_predict(meta, test_bundle))

        return {m: results[m] for m in METHODS if m in results and (m == "cold" or m in want)}

    def run(
        self, seeds: Sequence[int], progress: Optional[Callable[[int], None]] = None
    ) -> ExperimentReport:
        report = ExperimentReport(settings=self.settings, seeds=list(seeds))
        for seed in seeds:
            if progress:
                progress(seed)
            report.per_seed[seed] = self.run_seed(seed)
        return report
