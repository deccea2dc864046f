"""Attack every certified point at 0.999 of its radius on random mixtures and count flips."""
import argparse

import numpy as np

from ellipscert.baselines import AttackConfig, pgd_batch
from ellipscert.ellips import certify_batch
from ellipscert.mixture import MixtureModel, sample


def random_model(rng, K, d, anisotropic):
    means = rng.standard_normal((K, d)) * 2.0
    covs = []
    for _ in range(K):
        if anisotropic:
            Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            covs.append((Q * rng.uniform(0.3, 2.0, size=d)) @ Q.T)
        else:
            covs.append(np.eye(d))
    return MixtureModel.from_params(means, covs, np.full(K, 1.0 / K))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--points", type=int, default=430, help="points per model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=0.999, help="attack budget as a fraction of the radius")
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    total = flips = 0
    for K in (2, 3, 5, 10):
        for d in (2, 10, 50):
            for aniso in (False, True):
                m = random_model(rng, K, d, aniso)
                X = sample(m, args.points, int(rng.integers(2**31))).X
                c = certify_batch(m, X)
                ok = np.isfinite(c.radius)
                f, _ = pgd_batch(m, X[ok], c.predicted[ok], args.scale * c.radius[ok], AttackConfig())
                total += int(ok.sum())
                flips += int(f.sum())
                print(f"K={K:2d} d={d:2d} anisotropic={aniso!s:5}: {int(f.sum())} flips / {int(ok.sum())}")
    print(f"total: {flips} flips over {total} points")


if __name__ == "__main__":
    main()
