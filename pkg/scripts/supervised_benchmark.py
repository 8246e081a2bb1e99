"""EP versus FCLS on generated scenes, several seeds and noise levels.

    python3 scripts/supervised_benchmark.py --seeds 5 --snr 20 30 40
"""

import argparse
import time

import numpy as np

from epunmix import Hyperparams, fcls, generate_scene, run_ep
from epunmix.metrics import rmse, sre_db


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=50)
    ap.add_argument("--endmembers", type=int, default=5)
    ap.add_argument("--bands", type=int, default=100)
    ap.add_argument("--sparsity", type=int, default=3)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--snr", type=float, nargs="+", default=[30.0])
    ap.add_argument("--beta", type=float, nargs="+", default=[0.0, 0.3])
    ap.add_argument("--slab-v", type=float, default=0.5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    print(f"{'snr':>5} {'method':>12} {'rmse':>8} {'sre_db':>8} {'sec':>6}")
    for snr in args.snr:
        rows = {}
        for seed in range(args.seeds):
            sc = generate_scene(args.size, args.size, args.endmembers, args.bands, sparsity=args.sparsity, seed=seed, snr_db=snr)
            t = time.perf_counter()
            x = fcls(sc.image, sc.endmembers)
            rows.setdefault("fcls", []).append((rmse(sc.abundances, x), sre_db(sc.abundances, x), time.perf_counter() - t))
            for beta in args.beta:
                t = time.perf_counter()
                hp = Hyperparams(ising_beta=beta, slab_variance=args.slab_v)
                post, _ = run_ep(sc.image, sc.endmembers, sc.noise, hp, threads=args.threads)
                rows.setdefault(f"ep b={beta:g}", []).append(
                    (rmse(sc.abundances, post.means), sre_db(sc.abundances, post.means), time.perf_counter() - t)
                )
        for name, vals in rows.items():
            r, s, sec = np.mean(vals, axis=0)
            print(f"{snr:5.0f} {name:>12} {r:8.4f} {s:8.2f} {sec:6.2f}")


if __name__ == "__main__":
    main()
