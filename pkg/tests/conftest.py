import numpy as np
import pytest

from psnet.numerics.params import ParamStore


def fd_gradcheck(store: ParamStore, loss_fn, step: float = 1e-4,
                 rel_tol: float = 1e-4, denom_floor: float = 1e-3):
    """Compare the store's populated gradients against central finite
    differences of loss_fn() over every parameter coordinate.

    The relative error denominates by max(|analytic|, |fd|, denom_floor);
    the floor turns near-zero coordinates into absolute comparisons well
    above the ~1e-11 finite-difference noise floor of a double-precision
    loss of magnitude O(10).  Returns the worst relative error.
    """
    analytic = {n: store.grads[n].copy() for n in store.names()}
    worst = 0.0
    worst_at = None
    for name in store.names():
        param = store.params[name]
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = param[idx]
            param[idx] = orig + step
            up = float(loss_fn())
            param[idx] = orig - step
            down = float(loss_fn())
            param[idx] = orig
            fd = (up - down) / (2.0 * step)
            a = analytic[name][idx]
            rel = abs(a - fd) / max(abs(a), abs(fd), denom_floor)
            if rel > worst:
                worst, worst_at = rel, f"{name}{idx}"
    assert worst < rel_tol, f"gradient mismatch {worst:.3e} at {worst_at}"
    return worst


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path
