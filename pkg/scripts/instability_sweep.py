"""Unstable-mode count of the linearized flow as the damping varies.

Linearizing around a flat state turns each rescaled boundary eigenvalue
into zeta_j = -nu Lambda_j + s, so the number of unstable modes is
N+ = #{j : Lambda_j < s / nu}.  The script sweeps nu at a fixed shift,
counting positive pencil eigenvalues directly and cross-checking the
counting rule; shrinking nu can only recruit more unstable modes.
"""

import argparse

import numpy as np

from wentlab import domain, spectral


def main(argv=None):
    ap = argparse.ArgumentParser(
        description="unstable mode count vs damping")
    ap.add_argument("--cells", type=int, default=200)
    ap.add_argument("--shift", type=float, default=3.0,
                    help="common linearization shift s")
    ap.add_argument("--nu", default="1,0.5,0.25,0.125",
                    help="comma list of damping coefficients")
    args = ap.parse_args(argv)
    nus = [float(v) for v in args.nu.split(",")]

    mesh = domain.build_mesh(1, (1.0,), (args.cells,),
                             {"left": "gamma2", "right": "gamma1"})
    system = spectral.assemble_wentzell(mesh, "classic")
    lams = np.array([p.value for p in
                     spectral.solve_spectrum(system, k=min(system.size, 8))])
    print("lowest Lambda_j: " + "  ".join(f"{v:.5f}" for v in lams[:5]))

    print(f"\nshift s = {args.shift:g}")
    print("     nu   s/nu      N+ (pencil)   N+ (counting)   leading zeta_j")
    prev = -1
    for nu in nus:
        n_direct = spectral.instability_index(system, nu, args.shift,
                                              method="direct")
        n_count = spectral.instability_index(lams.tolist(), nu, args.shift,
                                             method="direct")
        zetas = -nu * lams[:3] + args.shift
        mark = "" if n_direct >= prev else "   (count dropped!)"
        prev = n_direct
        print(f"  {nu:5.3f}  {args.shift / nu:6.2f}  {n_direct:12d}  "
              f"{n_count:14d}   "
              + " ".join(f"{z:+.3f}" for z in zetas) + mark)


if __name__ == "__main__":
    main()
