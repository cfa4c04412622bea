"""Mesh-refinement study of the Robin/Wentzell interval spectrum.

The interval (0,1) carries a Robin wall at x = 0 and a dynamic
(eigenvalue-in-the-boundary-condition) wall at x = 1.  Separation of
variables gives phi = cos(kx) + sin(kx)/k with k a positive root of

    cos(k) (1 - k^2) - 2 k sin(k) = 0,    Lambda = k^2,

so the discrete spectrum can be judged against machine-accurate
transcendental roots.  P1 lumping converges at second order, the GLL
assembly at fourth.
"""

import argparse
import math

import numpy as np
from scipy.optimize import brentq

from wentlab import domain, spectral


def reference_eigenvalues(count):
    def det(k):
        return math.cos(k) * (1.0 - k * k) - 2.0 * k * math.sin(k)

    hi = 4.0 * (count + 1)
    ks = np.linspace(1e-4, hi, int(2000 * hi))
    vals = np.cos(ks) * (1.0 - ks ** 2) - 2.0 * ks * np.sin(ks)
    roots = []
    for a, b, fa, fb in zip(ks[:-1], ks[1:], vals[:-1], vals[1:]):
        if fa * fb < 0.0:
            roots.append(brentq(det, a, b, xtol=1e-14, rtol=8.9e-16))
        if len(roots) == count:
            break
    return np.array([k * k for k in roots])


def main(argv=None):
    ap = argparse.ArgumentParser(
        description="discrete Wentzell eigenvalues vs transcendental roots")
    ap.add_argument("--cells", default="50,100,200,400",
                    help="comma list of mesh resolutions (even for order 4)")
    ap.add_argument("--count", type=int, default=5,
                    help="number of eigenvalues to track")
    args = ap.parse_args(argv)
    cells = [int(c) for c in args.cells.split(",")]

    exact = reference_eigenvalues(args.count)
    print("reference Lambda_j: "
          + "  ".join(f"{v:.9f}" for v in exact))
    for order in (2, 4):
        print(f"\nassembly order {order} (relative eigenvalue errors)")
        header = "  cells" + "".join(f"   Lambda_{j + 1:<2d}" for j in range(args.count))
        print(header + "   rate")
        prev = None
        for n in cells:
            mesh = domain.build_mesh(1, (1.0,), (n,),
                                     {"left": "gamma2", "right": "gamma1"})
            system = spectral.assemble_wentzell(mesh, "classic", order=order)
            pairs = spectral.solve_spectrum(system, args.count)
            errs = np.abs(np.array([p.value for p in pairs]) - exact) / exact
            # rate from the worst eigenvalue; the small ones reach the
            # rounding floor long before the refinement ends at order 4
            rate = "" if prev is None else f"   {np.log2(prev.max() / errs.max()):.2f}"
            print(f"  {n:5d}" + "".join(f"  {e:9.2e}" for e in errs) + rate)
            prev = errs


if __name__ == "__main__":
    main()
