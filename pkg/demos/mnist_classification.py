"""1NN digit recognition on features learned from a contaminated training set.

Needs mlxtend for its bundled 5000-image MNIST sample.
"""
import sys

import numpy as np

from robust2dsvd import data as dio
from robust2dsvd.decomp2d import SampleSet, gkrsl_svd2d_fit, r1_svd2d_fit, svd2d_fit
from robust2dsvd.evaluation import FeatureSet, knn1_predict
from robust2dsvd.loss import GkrslParams

a = float(sys.argv[1]) if len(sys.argv) > 1 else 50.0
full = dio.load_mnist_sample()
X, y = full.samples, full.labels

rng = dio.make_rng(0)
tr, te = [], []
for d in range(10):
    idx = rng.permutation(np.flatnonzero(y == d))
    tr += list(idx[:100])
    te += list(idx[100:200])

train = dio.normalize_frobenius(SampleSet(X[tr], y[tr]))
test = dio.normalize_frobenius(SampleSet(X[te], y[te]))
c = dio.inject_outliers(train, dio.OutlierConfig(fraction=0.05, magnitude=a, seed=0))

fits = {
    "2DSVD": lambda: svd2d_fit(c.data, (15, 15)),
    "R1-2DSVD": lambda: r1_svd2d_fit(c.data, (15, 15)),
    "GKRSL-2DSVD": lambda: gkrsl_svd2d_fit(c.data, (15, 15), GkrslParams(8, 8, None)),
}
for name, fit in fits.items():
    model = fit()
    F = FeatureSet(model.transform(c.data.samples).reshape(len(c.data), -1), c.data.labels)
    pred = knn1_predict(F, model.transform(test.samples).reshape(len(test), -1))
    print(f"{name:12s} a={a:g}  accuracy {np.mean(pred == test.labels):.4f}")
