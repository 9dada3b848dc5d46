"""Numpy implementations of the compiled kernels (used when the extension is absent)."""

import numpy as np


def gaussian_lme(x, theta, inv_two_var):
    n, m = x.shape[0], theta.shape[0]
    diff = x[:, None, :] - theta[None, :, :]
    a = -np.einsum("ijk,ijk->ij", diff, diff) * inv_two_var
    amax = a.max(axis=1, keepdims=True)
    e = np.exp(a - amax)
    s = e.sum(axis=1, keepdims=True)
    value = float(np.mean(amax[:, 0] + np.log(s[:, 0])))
    w = e * (2.0 * inv_two_var / (s * n))
    grad = np.einsum("ij,ijk->jk", w, diff)
    return value, grad


def poisson_lme(x, theta):
    n = x.shape[0]
    a = x[:, None] * np.log(theta)[None, :] - theta[None, :]
    amax = a.max(axis=1, keepdims=True)
    e = np.exp(a - amax)
    s = e.sum(axis=1, keepdims=True)
    value = float(np.mean(amax[:, 0] + np.log(s[:, 0])))
    w = e / (s * n)
    grad = (w * (x[:, None] / theta[None, :] - 1.0)).sum(axis=0)
    return value, grad


def nearest_center(samples, centers, chunk=8192):
    count = samples.shape[0]
    labels = np.empty(count, dtype=np.int64)
    dist = np.empty(count, dtype=np.float64)
    for start in range(0, count, chunk):
        block = samples[start:start + chunk]
        diff = block[:, None, :] - centers[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        # argmin returns the first minimum, i.e. the lowest index on ties
        idx = np.argmin(d2, axis=1)
        labels[start:start + chunk] = idx
        dist[start:start + chunk] = d2[np.arange(len(idx)), idx]
    return labels, dist
