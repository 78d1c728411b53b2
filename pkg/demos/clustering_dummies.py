"""K-means on 2D features when random dummy images are mixed into the training set."""
import numpy as np

from robust2dsvd import data as dio
from robust2dsvd.decomp2d import SampleSet, gkrsl_svd2d_fit, svd2d_fit
from robust2dsvd.evaluation import FeatureSet, density_peaks_init, kmeans
from robust2dsvd.loss import GkrslParams

size, K, per = 16, 10, 10
scores = {"2DSVD": [], "GKRSL": []}
for seed in range(5):
    rng = dio.make_rng(seed)
    protos = [128 + 40 * sum(np.outer(rng.standard_normal(size), rng.standard_normal(size)) for _ in range(3)) / 3
              for _ in range(K)]
    X = np.stack([np.clip(protos[c] + 20 * rng.standard_normal((size, size)), 0, 255)
                  for c in range(K) for _ in range(per)])
    y = np.repeat(np.arange(K), per)
    c = dio.inject_outliers(SampleSet(X, y), dio.OutlierConfig(mode="dummy", count=30, seed=seed))
    data = dio.normalize_frobenius(c.data)

    for name, model in [("2DSVD", svd2d_fit(data, (3, 3))),
                        ("GKRSL", gkrsl_svd2d_fit(data, (3, 3), GkrslParams(8, 8, None)))]:
        # cluster the clean samples only; dummies just shaped the subspace
        F = model.transform(data.samples[: K * per]).reshape(K * per, -1)
        res = kmeans(FeatureSet(F, y), K, density_peaks_init(F, K))
        scores[name].append((res.ac, res.nmi))

for name, s in scores.items():
    s = np.array(s)
    print(f"{name}: AC {s[:, 0].mean():.4f} +- {s[:, 0].std(ddof=1):.4f}   NMI {s[:, 1].mean():.4f}")
