import numpy as np
import pytest

from mambaseg.rng import Xoshiro256
from mambaseg.tensor import ParamStore, Tensor, finite_diff, grads_for, make


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Scale-floored max relative error (floor absorbs FD roundoff on
    near-zero coordinates)."""
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def check_grads(store: ParamStore, f, tol: float = 1e-4, eps: float = 1e-5) -> float:
    """Compare tape gradients against central finite differences."""
    analytic = grads_for(f(), store)
    numeric = finite_diff(f, store, eps=eps)
    worst = max(rel_err(analytic[k].data, numeric[k].data) for k in store.names())
    assert worst <= tol, f"gradient mismatch {worst:.3e}"
    return worst


def gauss_param(store: ParamStore, name: str, shape, seed: int) -> Tensor:
    return store.add(name, make(shape, "gaussian", seed=seed, dtype="f64"))


@pytest.fixture
def rng():
    return Xoshiro256(1234, "tests")
