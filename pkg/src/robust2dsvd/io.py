"""Model and tensor containers.

Models go to a single ``.npz`` archive (uncompressed, no pickles) holding the
dimensions, mean, projectors and objective trace as float64 arrays, so a
round trip is bit-exact.  Plain tensors use the ``.npy`` format: a shape
header followed by the row-major float64 payload.
"""
from __future__ import annotations

import numpy as np

from .decomp2d import Decomposition2D
from .loss import GkrslParams
from .tensor import TensorModel

FORMAT_VERSION = 1


def save_tensor(path, tensor) -> None:
    a = np.ascontiguousarray(tensor, dtype=np.float64)
    with open(path, "wb") as fh:
        np.save(fh, a, allow_pickle=False)


def load_tensor(path) -> np.ndarray:
    a = np.load(path, allow_pickle=False)
    if a.dtype != np.float64:
        raise ValueError(f"{path}: expected float64 payload, found {a.dtype}")
    return a


def _params_fields(params, sigma):
    out = {"sigma": np.float64(np.nan if sigma is None else sigma)}
    if params is not None:
        out["lam"] = np.float64(params.lam)
        out["p"] = np.float64(params.p)
    return out


def _params_from(z):
    if "lam" not in z:
        return None
    sigma = float(z["sigma"])
    return GkrslParams(float(z["lam"]), float(z["p"]), None if np.isnan(sigma) else sigma)


def save_model(path, model) -> None:
    """Write a fitted :class:`Decomposition2D` or :class:`TensorModel`."""
    if not isinstance(model, (Decomposition2D, TensorModel)):
        raise TypeError(f"cannot serialize {type(model).__name__}")
    common = dict(
        version=np.int64(FORMAT_VERSION),
        method=np.str_(model.method),
        mean=model.mean,
        objective_trace=np.asarray(model.objective_trace, dtype=np.float64),
        n_iter=np.int64(model.n_iter),
        converged=np.bool_(model.converged),
        **_params_fields(model.params, model.sigma),
    )
    if isinstance(model, Decomposition2D):
        m, n = model.mean.shape
        k1, k2 = model.L.shape[1], model.R.shape[1]
        arrays = dict(kind=np.str_("2d"), m=np.int64(m), n=np.int64(n), k1=np.int64(k1), k2=np.int64(k2),
                      L=model.L, R=model.R)
    else:
        arrays = dict(kind=np.str_("tensor"), shape=np.asarray(model.mean.shape, dtype=np.int64),
                      ranks=np.asarray(model.ranks, dtype=np.int64))
        arrays.update({f"factor_{j}": V for j, V in enumerate(model.factors)})
    with open(path, "wb") as fh:
        np.savez(fh, **common, **arrays)


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model format version {int(z['version'])}")
        kind = str(z["kind"])
        sigma = float(z["sigma"])
        kw = dict(
            mean=z["mean"],
            objective_trace=tuple(float(v) for v in z["objective_trace"]),
            method=str(z["method"]),
            sigma=None if np.isnan(sigma) else sigma,
            params=_params_from(z),
            n_iter=int(z["n_iter"]),
            converged=bool(z["converged"]),
        )
        if kind == "2d":
            L, R = z["L"], z["R"]
            if L.shape != (int(z["m"]), int(z["k1"])) or R.shape != (int(z["n"]), int(z["k2"])):
                raise ValueError(f"{path}: projector shapes disagree with the header")
            return Decomposition2D(L=L, R=R, **kw)
        if kind == "tensor":
            factors = tuple(z[f"factor_{j}"] for j in range(len(z["shape"])))
            return TensorModel(factors=factors, **kw)
    raise ValueError(f"{path}: unknown model kind {kind!r}")
