"""How the GKRSL loss and its weights behave as the residual grows."""
import numpy as np

from robust2dsvd.loss import GkrslParams, effective_eigen_weight, gkrsl_value, weight_peak

np.set_printoptions(precision=4, suppress=True)
# start above zero: for p < 2 the weight grows without bound as E -> 0
E = np.array([0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0])

for lam, p in [(0.5, 0.5), (2, 2), (8, 8)]:
    params = GkrslParams(lam, p, 1.0)
    print(f"lambda={lam} p={p}")
    print("  loss      ", gkrsl_value(E, params))
    w = effective_eigen_weight(E, params)
    print("  weight    ", w / w.max())
    # s = E^2 / (2 sigma^2) where the weight peaks, or 1 when it only decreases
    print("  peak at s =", round(weight_peak(lam, p), 3))

# the weight never exceeds the peak and dies off for large residuals,
# which is what keeps gross outliers from pulling the subspace
params = GkrslParams(8, 8, 1.0)
s = np.linspace(0, 30, 301)
w = effective_eigen_weight(np.sqrt(2 * s), params)
print("weight at s=30 relative to peak:", w[-1] / w.max())
