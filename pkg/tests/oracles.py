"""Independent reference computations shared by unit and acceptance tests."""
import numpy as np
from scipy.special import ndtri


def kl_monte_carlo(mu: float, logvar: float, n: int = 1_000_000, seed: int = 0) -> float:
    """E_q[log q(z) - log p(z)] for q = N(mu, exp(logvar)), p = N(0, 1), by sampling z ~ q.

    Stratified: one uniform draw inside each of ``n`` equal-probability strata.
    """
    rng = np.random.default_rng(seed)
    u = (np.arange(n) + rng.random(n)) / n
    eps = ndtri(u)
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * eps
    log_q = -0.5 * eps**2 - np.log(sigma) - 0.5 * np.log(2 * np.pi)
    log_p = -0.5 * z**2 - 0.5 * np.log(2 * np.pi)
    return float(np.mean(log_q - log_p))


def l1_loop(a, b) -> float:
    a, b = np.asarray(a, np.float64).ravel(), np.asarray(b, np.float64).ravel()
    total = 0.0
    for x, y in zip(a, b):
        total += abs(x - y)
    return total / a.size


def l2_loop(a, b) -> float:
    a, b = np.asarray(a, np.float64).ravel(), np.asarray(b, np.float64).ravel()
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    return total / a.size


def ssim_windows(a, b, peak: float = 1.0, window: int = 8) -> float:
    """Per-window SSIM written out with explicit loops over windows."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.ndim == 3:
        a, b = a.mean(axis=0), b.mean(axis=0)
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    scores = []
    for i in range(0, a.shape[0] - window + 1, window):
        for j in range(0, a.shape[1] - window + 1, window):
            x = a[i : i + window, j : j + window].ravel()
            y = b[i : i + window, j : j + window].ravel()
            mx, my = x.mean(), y.mean()
            vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
            cxy = ((x - mx) * (y - my)).mean()
            scores.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(scores))
