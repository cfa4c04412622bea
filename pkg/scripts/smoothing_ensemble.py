"""Does the dynamic-boundary flow with cubic absorption forget its data?

Runs the same scenario at several initial amplitudes, records the sup norm
X_inf on a shared time grid and classifies the ensemble: P-(i) means the
curves collapse onto a single envelope after the waiting time eta, P-(ii)
only on the final stretch of the horizon, P-(iii) mere order preservation
of the suprema.
"""

import argparse

import numpy as np

from wentlab import analysis, domain, model, solver


def member(scale, cells, horizon, grid):
    mesh = domain.build_mesh(1, (1.0,), (cells,),
                             {"left": "gamma1", "right": "gamma1"})
    rx = model.ReactionSpec(f=[model.Expression("u**3 - u", ("u",))],
                            g=[model.Expression("u**3 - u", ("u",))],
                            h=[model.Expression("0", ("u",))],
                            m_exp=np.array([2.0]), theta=np.array([3.0]))
    bcs = {s: model.BoundaryCondition(kind="dynamic", delta=1.0)
           for s in ("left", "right")}
    sc = model.Scenario(
        mesh=mesh, field_names=("u",),
        diffusion=[model.DiffusionLaw(form="constant", alpha=1.0)],
        reactions=rx, boundary=model.BoundaryAssignment([bcs]),
        initial=[f"{scale}*(1 + sin(pi*x)/4)"], horizon=horizon,
        name=f"scale_{scale}")
    tr = solver.run(sc)
    return analysis.xvec_series(tr, [np.inf], dynamic=(0,), times=grid)


def main(argv=None):
    ap = argparse.ArgumentParser(
        description="sup-norm smoothing across initial amplitudes")
    ap.add_argument("--scales", default="1,10,100",
                    help="comma list of initial amplitudes (span >= 100)")
    ap.add_argument("--cells", type=int, default=64)
    ap.add_argument("--horizon", type=float, default=1.5)
    ap.add_argument("--eta", type=float, default=1.0,
                    help="waiting time before the envelopes must agree")
    args = ap.parse_args(argv)
    scales = [float(s) for s in args.scales.split(",")]

    grid = np.linspace(0.0, args.horizon, 31)
    members = [member(s, args.cells, args.horizon, grid) for s in scales]

    print("   t     " + "".join(f"  X_inf({s:g})" for s in scales) + "   ratio")
    Y = np.vstack([m.channels["xinf"] for m in members])
    for k in range(0, len(grid), 3):
        row = "".join(f"  {Y[i, k]:9.4f}" for i in range(len(scales)))
        print(f"  {grid[k]:5.2f} " + row + f"  {Y[:, k].max() / Y[:, k].min():6.3f}")

    verdict = analysis.property_p_classify(members, eta=args.eta,
                                           channel="xinf")
    print(f"\nclassification with eta = {args.eta:g}: {verdict}")


if __name__ == "__main__":
    main()
