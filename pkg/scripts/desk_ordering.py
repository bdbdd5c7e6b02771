"""Desk-scale comparison of churn-reduction methods across seeds.

Checks that mean relevant churn orders Combined < Conf < Cold, that the
selection methods keep accuracy within half a point of Cold, and that
AMC Distill matches or beats AMC Learned on most seeds.
"""

import sys
import time

from churn_compass.experiment import ChurnExperiment, ExperimentSettings

SEEDS = list(range(10))
ACCURACY_SLACK = 0.005
DISTILL_WINS_NEEDED = 7


def print_summary(summary: dict):
    print(f"\n{'method':<18} {'accuracy':>10} {'C_rel':>10}")
    print("-" * 40)
    for name, row in summary.items():
        print(f"{name:<18} {row['accuracy_mean']:>10.4f} {row['relevant_churn_mean']:>10.4f}")


def main():
    """Run the comparison and report each ordering check."""
    print("\n" + "=" * 60)
    print("Churn Compass - Desk-Scale Method Ordering")
    print("=" * 60)

    settings = ExperimentSettings(
        methods=("amc_conf", "amc_combined", "amc_learned", "amc_distill"),
    )
    print(f"\n📂 {settings.n_train} train / {settings.n_update} update samples, "
          f"{settings.num_classes} classes, {len(SEEDS)} seeds")

    start_time = time.time()
    report = ChurnExperiment(settings).run(SEEDS, progress=lambda s: print(f"🔍 Seed {s}..."))
    elapsed = time.time() - start_time

    summary = report.summary()
    print_summary(summary)

    cold, conf, combined = summary["cold"], summary["amc_conf"], summary["amc_combined"]
    checks = {
        "Combined < Conf": combined["relevant_churn_mean"] < conf["relevant_churn_mean"],
        "Conf < Cold": conf["relevant_churn_mean"] < cold["relevant_churn_mean"],
        "Conf accuracy within slack": conf["accuracy_mean"] >= cold["accuracy_mean"] - ACCURACY_SLACK,
        "Combined accuracy within slack": combined["accuracy_mean"] >= cold["accuracy_mean"] - ACCURACY_SLACK,
    }

    wins = sum(
        results["amc_distill"].relevant_churn <= results["amc_learned"].relevant_churn
        for results in report.per_seed.values()
    )
    checks[f"Distill <= Learned on >= {DISTILL_WINS_NEEDED} seeds ({wins})"] = wins >= DISTILL_WINS_NEEDED

    print(f"\n📊 Checks:")
    for name, ok in checks.items():
        print(f"   {'✅' if ok else '❌'} {name}")
    print(f"   ⏱️  Total time: {elapsed:.1f}s")

    if not all(checks.values()):
        print("\n❌ Ordering checks failed!")
        sys.exit(1)
    print("\n✅ All ordering checks passed!")


if __name__ == "__main__":
    main()
