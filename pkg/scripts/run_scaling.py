"""Radius-error scaling study: regress log mean |R_hat - R| on log n and log d."""
import argparse
from pathlib import Path

from ellipscert.experiments import ScalingStudyConfig, scaling_study
from ellipscert.formats import dump_json


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="results/scaling.json", help="report JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=10)
    args = p.parse_args()
    rep = scaling_study(ScalingStudyConfig(trials=args.trials, seed=args.seed))
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(rep.to_dict()))
    print(f"slope on log n: {rep.alpha:.3f} +- {rep.alpha_se:.3f}")
    print(f"slope on log d: {rep.beta:.3f} +- {rep.beta_se:.3f}")
    print(f"{rep.n_obs} cells used, {rep.failed} skipped (singular sample covariance)")


if __name__ == "__main__":
    main()
