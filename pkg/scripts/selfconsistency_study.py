"""Constrained vs vanilla full-batch training on 200-sample blobs.

For every seed both variants take unit-norm steps from the same
initialisation. Constrained runs must keep the post-projection
incompatible fraction at or below 1%, both variants must reach full
training accuracy, and the constrained run must finish with fewer
cumulative negative flips on at least 8 of 10 seeds.
"""

import sys
import time

from churn_compass.trainer.datasets import synth_dataset
from churn_compass.trainer.selfconsistency import self_consistency_run
from churn_compass.trainer.training import NetSpec

SEEDS = list(range(10))
N_SAMPLES = 200
EPOCHS = 2000
LR = 0.005
HIDDEN = (32, 32)
MAX_POST_FRACTION = 0.01
WINS_NEEDED = 8


def main():
    """Run both variants per seed and report the three checks."""
    print("\n" + "=" * 60)
    print("Churn Compass - Self-Consistent Training Study")
    print("=" * 60)
    print(f"\n📂 blobs n={N_SAMPLES}, {EPOCHS} epochs, lr={LR}, hidden={HIDDEN}, unit-norm steps")

    start_time = time.time()
    wins = 0
    worst_post = 0.0
    all_full = True

    print(f"\n{'seed':>4} {'NFs vanilla':>12} {'NFs constr.':>12} {'acc vanilla':>12} {'acc constr.':>12}")
    print("-" * 56)
    for seed in SEEDS:
        data = synth_dataset("blobs", N_SAMPLES, seed=seed)
        spec = NetSpec.for_data(data, HIDDEN)
        vanilla = self_consistency_run(data, spec, LR, EPOCHS, constrained=False, unit_norm=True, seed=seed).summary()
        constrained = self_consistency_run(data, spec, LR, EPOCHS, constrained=True, unit_norm=True, seed=seed).summary()

        wins += constrained["cumulative_nfs"] < vanilla["cumulative_nfs"]
        worst_post = max(worst_post, constrained["max_incompatible_fraction_post"])
        all_full &= vanilla["final_accuracy"] >= 1.0 and constrained["final_accuracy"] >= 1.0
        print(f"{seed:>4} {vanilla['cumulative_nfs']:>12} {constrained['cumulative_nfs']:>12} "
              f"{vanilla['final_accuracy']:>12.3f} {constrained['final_accuracy']:>12.3f}")

    elapsed = time.time() - start_time
    checks = {
        f"Post-projection incompatible fraction <= 1% (worst {worst_post:.2%})": worst_post <= MAX_POST_FRACTION,
        f"Fewer NFs with constraint on >= {WINS_NEEDED} seeds ({wins})": wins >= WINS_NEEDED,
        "Both variants reach 100% training accuracy": all_full,
    }

    print(f"\n📊 Checks:")
    for name, ok in checks.items():
        print(f"   {'✅' if ok else '❌'} {name}")
    print(f"   ⏱️  Total time: {elapsed:.1f}s")

    if not all(checks.values()):
        print("\n❌ Self-consistency checks failed!")
        sys.exit(1)
    print("\n✅ All self-consistency checks passed!")


if __name__ == "__main__":
    main()
