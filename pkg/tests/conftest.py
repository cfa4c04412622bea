import numpy as np
import pytest

from wentlab import domain, model, solver


@pytest.fixture(scope="session", autouse=True)
def jit_warmup():
    # compile the stepping kernels once so timed tests measure physics,
    # not numba
    sc = scalar_scenario(cells=8, horizon=1e-4)
    solver.run(sc)


def unit_mesh(cells=64, boundary=None, length=1.0):
    boundary = boundary or {"left": "gamma1", "right": "gamma1"}
    return domain.build_mesh(1, (length,), (cells,), boundary)


def scalar_scenario(cells=64, horizon=0.1, initial="sin(pi*x)", f="0", g="0",
                    h="0", diffusion=None, bcs=None, boundary=None, m=2.0,
                    theta=None, length=1.0, config=None, monitors=None,
                    initial_trace=None, name="test"):
    """One-field scenario with static no-flux walls unless told otherwise."""
    mesh = unit_mesh(cells, boundary, length)
    law = diffusion or model.DiffusionLaw(form="constant", alpha=1.0)
    rx = model.ReactionSpec(
        f=[model.Expression(f, ("u",))], g=[model.Expression(g, ("u",))],
        h=[model.Expression(h, ("u",))], m_exp=np.array([m]),
        theta=None if theta is None else np.array([theta]))
    sides = sorted(set(mesh.b_side))
    if bcs is None:
        bcs = {side: model.BoundaryCondition(kind="static") for side in sides}
    sc = model.Scenario(mesh=mesh, field_names=("u",), diffusion=[law],
                        reactions=rx, boundary=model.BoundaryAssignment([bcs]),
                        initial=[initial], initial_trace=None if initial_trace
                        is None else [initial_trace],
                        horizon=horizon, solver=config, monitors=monitors,
                        name=name)
    return sc
