"""Check localization masses and overlap bounds against Monte-Carlo on the circle mixtures."""
import argparse

import numpy as np

from ellipscert.experiments import ANISOTROPIC, ISOTROPIC, circle_model
from ellipscert.localization import LocalizationQuery, localize, monte_carlo_masses


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--draws", type=int, default=10**6)
    p.add_argument("--delta", type=float, default=0.001)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args()
    print("K,R,kind,class,mc_inside,bound_inside,mc_overlap,gamma,legacy_gamma")
    for K in (2, 3, 5, 10):
        for R in (2.0, 4.0, 6.0):
            for kind in (ISOTROPIC, ANISOTROPIC):
                m = circle_model(K, R, 2, kind)
                q = LocalizationQuery.for_delta(m, args.delta, args.epsilon)
                rep = localize(m, q)
                legacy = localize(m, q, legacy_formula=True)
                inside, over = monte_carlo_masses(m, q, args.draws, args.seed)
                for i in range(K):
                    print(f"{K},{R:g},{kind},{i},{inside[i]:.6f},{1 - rep.delta_i[i]:.6f},{over[i]:.6f},"
                          f"{rep.gamma_i[i]:.6f},{legacy.gamma_i[i]:.6f}")


if __name__ == "__main__":
    main()
