"""Independent reference computations shared by the tests."""

import numpy as np
from scipy import optimize


def dense_negloglik(Sigma, S, T):
    """T (log|Sigma| + tr(S Sigma^{-1})) by slogdet and solve."""
    sign, logdet = np.linalg.slogdet(Sigma)
    assert sign > 0
    return T * (logdet + np.trace(np.linalg.solve(Sigma, S)))


def brute_force_ml(F, S, T, sigma_eps2, starts=12, seed=0):
    """Minimise the dense likelihood over M = L L' and sigma_xi2 = theta^2."""
    n, K = F.shape
    tri = np.tril_indices(K)
    rng = np.random.default_rng(seed)

    def unpack(x):
        L = np.zeros((K, K))
        L[tri] = x[:-1]
        return L @ L.T, x[-1] ** 2

    def obj(x):
        M, sxi = unpack(x)
        Sigma = F @ M @ F.T + (sxi + sigma_eps2) * np.eye(n)
        sign, logdet = np.linalg.slogdet(Sigma)
        if sign <= 0:
            return 1e300
        return T * (logdet + np.trace(np.linalg.solve(Sigma, S)))

    best = None
    for _ in range(starts):
        x0 = rng.standard_normal(len(tri[0]) + 1)
        r = optimize.minimize(obj, x0, method="BFGS", options={"gtol": 1e-9, "maxiter": 20000})
        r = optimize.minimize(obj, r.x, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-12, "maxiter": 40000})
        if best is None or r.fun < best.fun:
            best = r
    M, sxi = unpack(best.x)
    return best.fun, M, sxi
