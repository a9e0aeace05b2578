import numpy as np

from bdprem.data import Dataset, DataSchema


def build_dataset(y, X, W, subject_index, times=None, alpha_fixed=(), alpha_varying=(),
                  w_names=None, subject_prefix="s", z_true=None):
    """Assemble an in-memory Dataset from raw arrays (rows already grouped
    by subject, one block per subject in index order)."""
    y = np.asarray(y, dtype=np.int64)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    subject_index = np.asarray(subject_index, dtype=np.int64)
    n = int(subject_index.max()) + 1 if subject_index.size else 0
    if times is None:
        times = np.zeros(y.size)
        for i in range(n):
            rows = np.nonzero(subject_index == i)[0]
            times[rows] = np.arange(rows.size, dtype=float)
    alpha_fixed = list(alpha_fixed)
    alpha_varying = list(alpha_varying)
    if not alpha_fixed and not alpha_varying:
        alpha_varying = [f"x{j}" for j in range(X.shape[1])]
    w_names = list(w_names) if w_names is not None else [f"w{j}" for j in range(W.shape[1])]
    schema = DataSchema(
        alpha_fixed=alpha_fixed,
        alpha_varying=alpha_varying,
        h=["Intercept"],
        w=w_names,
    )
    width = max(2, len(str(max(n - 1, 0))))
    return Dataset(
        subject_ids=[f"{subject_prefix}{i:0{width}d}" for i in range(n)],
        subject_index=subject_index,
        times=np.asarray(times, dtype=float),
        y=y,
        X=X,
        H=np.ones((y.size, 1)),
        W=W,
        schema=schema,
        z_true=z_true,
    )


def single_subject_dataset(y_values, lam_w=None):
    """One subject, len(y_values) observations, intercept-only designs."""
    y = np.asarray(y_values, dtype=np.int64)
    N = y.size
    return build_dataset(
        y=y,
        X=np.ones((N, 1)),
        W=np.ones((N, 1)) if lam_w is None else np.atleast_2d(lam_w),
        subject_index=np.zeros(N, dtype=np.int64),
        alpha_fixed=["Intercept"],
        w_names=["Intercept"],
    )


def quantile_ks(draws, log_density, grid):
    """KS distance between empirical draws and a 1-d density known on a grid
    (trapezoid-normalized)."""
    ld = log_density(grid)
    ld -= ld.max()
    dens = np.exp(ld)
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2.0 * np.diff(grid))])
    cdf /= cdf[-1]
    draws = np.sort(np.asarray(draws, dtype=float))
    emp = np.searchsorted(draws, grid, side="right") / draws.size
    return np.max(np.abs(emp - cdf))
