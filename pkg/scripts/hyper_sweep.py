"""RMSE of EP over a grid of slab variances and Ising couplings on one scene."""

import argparse
import itertools

from epunmix import Hyperparams, generate_scene, run_ep
from epunmix.metrics import rmse


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--snr", type=float, default=30.0)
    ap.add_argument("--slab-v", type=float, nargs="+", default=[0.1, 0.5, 1.0])
    ap.add_argument("--beta", type=float, nargs="+", default=[0.0, 0.1, 0.3, 0.5, 0.7, 0.9])
    args = ap.parse_args()

    sc = generate_scene(50, 50, 5, 100, seed=args.seed, snr_db=args.snr)
    print(f"{'v':>5} {'beta':>5} {'rmse':>8} {'iters':>5} {'skipped':>8}")
    for v, beta in itertools.product(args.slab_v, args.beta):
        post, rep = run_ep(sc.image, sc.endmembers, sc.noise, Hyperparams(slab_variance=v, ising_beta=beta))
        print(f"{v:5g} {beta:5g} {rmse(sc.abundances, post.means):8.4f} {rep.iterations:5d} {rep.skipped:8d}")


if __name__ == "__main__":
    main()
