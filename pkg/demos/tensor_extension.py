"""Third-order samples: the higher-order fit against plain HOSVD-style projection."""
import numpy as np

from robust2dsvd import data as dio
from robust2dsvd.tensor import ho_gkrsl_fit, ho_residual, ho_svd_fit, multi_mode_product
from robust2dsvd.loss import GkrslParams

rng = dio.make_rng(5)
dims, ranks = (8, 7, 6), (2, 2, 2)
U = [np.linalg.qr(rng.standard_normal((d, k)))[0] for d, k in zip(dims, ranks)]
X = np.stack([multi_mode_product(rng.standard_normal(ranks), U) for _ in range(60)])
X += 0.05 * rng.standard_normal(X.shape)
out = [4, 17, 40]
X[out] = 20 * rng.standard_normal((3,) + dims)

plain = ho_svd_fit(X, ranks)
robust = ho_gkrsl_fit(X, ranks, GkrslParams(8, 8, None))
keep = np.setdiff1d(np.arange(len(X)), out)
for name, model in [("plain", plain), ("GKRSL", robust)]:
    err = np.mean([ho_residual(X[i], model.mean, model.factors) ** 2 for i in keep])
    print(f"{name:6s} mean squared residual over inliers {err:.4f}")
print("core shape", robust.project(X[0]).shape, "iterations", robust.n_iter)
