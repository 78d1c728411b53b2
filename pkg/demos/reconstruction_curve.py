"""Reconstruction error against rank with 30 dummy images in the training set."""
import numpy as np

from robust2dsvd import data as dio
from robust2dsvd.decomp2d import SampleSet, gkrsl_svd2d_fit, svd2d_fit
from robust2dsvd.evaluation import reconstruction_error
from robust2dsvd.loss import GkrslParams

size, rank = 24, 6
rng = dio.make_rng(3)
A, B = rng.standard_normal((size, rank)), rng.standard_normal((size, rank))
X = np.stack([np.clip(128 + 30 * A @ rng.standard_normal((rank, rank)) @ B.T / rank
                      + 10 * rng.standard_normal((size, size)), 0, 255) for _ in range(165)])

c = dio.inject_outliers(SampleSet(X), dio.OutlierConfig(mode="dummy", count=30, seed=3))
d = dio.normalize_frobenius(c.data)
clean = d.samples[:165]

print(" k    2DSVD       GKRSL")
for k in range(2, size + 1, 2):
    row = []
    for model in (svd2d_fit(d, (k, k)), gkrsl_svd2d_fit(d, (k, k), GkrslParams(0.5, 0.5, None))):
        row.append(reconstruction_error(clean, model.inverse_transform(model.transform(clean))))
    print(f"{k:2d}  {row[0]:.3e}  {row[1]:.3e}")
