import numpy as np

from weakfeller.measures import FiniteMeasure, MetricSpace
from weakfeller.models import PomdpModel


def stochastic(rng, shape, sparsity=0.0):
    """Random row-stochastic array; with ``sparsity`` some entries are zeroed (never a whole row)."""
    A = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    if sparsity:
        mask = rng.random(A.shape) < sparsity
        keep = np.argmax(A, axis=-1)[..., None]
        np.put_along_axis(mask, keep, False, axis=-1)
        A = np.where(mask, 0.0, A)
        A /= A.sum(axis=-1, keepdims=True)
    return A


def random_model(rng, nx, ny, nu, sparsity=0.0, name="random"):
    X = MetricSpace.line(np.arange(nx, dtype=float))
    return PomdpModel(
        states=X,
        actions=MetricSpace.line(np.arange(nu, dtype=float)),
        observations=MetricSpace.line(np.arange(ny, dtype=float)),
        transition=stochastic(rng, (nu, nx, nx), sparsity),
        channel=stochastic(rng, (nu, nx, ny), sparsity),
        prior=FiniteMeasure(X, rng.dirichlet(np.ones(nx))),
        cost=rng.uniform(0, 1, (nx, nu)),
        name=name,
    )


def tabulated(T, Q, z=None, cost=None, name="tab"):
    T = np.asarray(T, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if T.ndim == 2:
        T = T[None]
    if Q.ndim == 2:
        Q = np.repeat(Q[None], T.shape[0], axis=0)
    nu, nx, _ = T.shape
    X = MetricSpace.line(np.arange(nx, dtype=float))
    return PomdpModel(
        states=X,
        actions=MetricSpace.line(np.arange(nu, dtype=float)),
        observations=MetricSpace.line(np.arange(Q.shape[2], dtype=float)),
        transition=T,
        channel=Q,
        prior=FiniteMeasure.uniform(X) if z is None else FiniteMeasure(X, z),
        cost=np.zeros((nx, nu)) if cost is None else np.asarray(cost, dtype=float),
        name=name,
    )
