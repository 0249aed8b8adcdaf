import numpy as np


def within_bands(freq: dict, exact: dict, draws: int, sigmas: float) -> bool:
    """Every cell's empirical frequency lies within ``sigmas`` binomial standard errors."""
    for key in set(freq) | set(exact):
        p = exact.get(key, 0.0)
        f = freq.get(key, 0.0)
        if p == 0.0:
            if f > 0.0:
                return False
            continue
        if abs(f - p) > sigmas * np.sqrt(p * (1 - p) / draws) + 1e-12:
            return False
    return True


def frequencies(rows: np.ndarray) -> dict:
    vals, cnt = np.unique(np.atleast_2d(rows), axis=0, return_counts=True)
    total = cnt.sum()
    return {tuple(int(x) for x in v): c / total for v, c in zip(vals, cnt)}
