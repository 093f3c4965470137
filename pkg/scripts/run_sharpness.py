"""Single-direction small-ball curve vs the exact product-of-uniforms law.

Writes sharpness.csv (+ sidecar) and prints the log-deflated slope, which
should sit near 1 for cube factors on the diagonal direction.
"""

import argparse

import numpy as np

from tensorball import (
    DistributionSpec,
    ExperimentConfig,
    diagonal_direction,
    estimate_direction_smallball,
    fit_slope,
    product_uniform_smallball,
    write_curve,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--l", dest="ell", type=int, default=3)
    ap.add_argument("--trials", type=float, default=1e6)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="sharpness")
    args = ap.parse_args()

    grid = tuple(sorted((float(e) for e in np.geomspace(1e-3, 1e-1, 20)), reverse=True))
    specs = (DistributionSpec(kind="uniform-cube-unit", dim=args.n),) * args.ell
    cfg = ExperimentConfig(
        seed=args.seed, trials=int(args.trials), epsilon_grid=grid, confidence=0.999
    )
    curve = estimate_direction_smallball(specs, diagonal_direction(args.n, args.ell), cfg)
    exact = {"exact": [product_uniform_smallball(args.ell, 1.0, e) for e in grid]}
    sidecar = write_curve(args.out, curve, cfg.to_json_dict(), extra_columns=exact)
    print(f"wrote {sidecar['csv']}")
    fit = fit_slope(curve, (grid[-1], grid[0]), deflate_log_power=args.ell - 1)
    print(f"deflated slope {fit.slope:.4f} +- {fit.stderr:.4f} ({fit.n_points} points)")


if __name__ == "__main__":
    main()
