"""Slow, literal reference implementations used only as test oracles."""
import math

import numpy as np


def scl_double_loop(Z, labels, tau):
    """Per-anchor -log(sum over positives / sum over all others), averaged; plain loops."""
    Z = np.asarray(Z, dtype=float)
    n = len(Z)
    total = 0.0
    for i in range(n):
        num = 0.0
        den = 0.0
        for k in range(n):
            if k == i:
                continue
            e = math.exp(float(Z[i] @ Z[k]) / tau)
            den += e
            if labels[k] == labels[i]:
                num += e
        total += -math.log(num / den)
    return total / n


def column_cosine(a, b):
    na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(x * x for x in b))
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def cr_loop(C, margin):
    """C is [batch, layers, width]; sums adjacent correlations reaching the margin."""
    C = np.asarray(C, dtype=float)
    total = 0.0
    for l in range(C.shape[1] - 1):
        for d in range(C.shape[2]):
            c = column_cosine(C[:, l, d], C[:, l + 1, d])
            if c >= margin:
                total += c
    return total


def auroc_trapezoid(ind, ood):
    """Area under the empirical ROC (IND = positive class), thresholds at every distinct score."""
    ind, ood = np.asarray(ind, float), np.asarray(ood, float)
    thresholds = np.unique(np.r_[ind, ood])[::-1]
    tpr = [0.0] + [float((ind >= t).mean()) for t in thresholds]
    fpr = [0.0] + [float((ood >= t).mean()) for t in thresholds]
    area = 0.0
    for i in range(1, len(tpr)):
        area += (fpr[i] - fpr[i - 1]) * (tpr[i] + tpr[i - 1]) / 2
    return area


def mahalanobis_sq(x, mu, cov):
    diff = np.asarray(x, float) - np.asarray(mu, float)
    return float(diff @ np.linalg.solve(cov, diff))


def tied_gaussian(X, y, eps):
    """Class means and pooled covariance written out class by class."""
    classes = sorted(set(int(c) for c in y))
    means = {c: X[y == c].mean(axis=0) for c in classes}
    S = np.zeros((X.shape[1], X.shape[1]))
    for x, c in zip(X, y):
        d = x - means[int(c)]
        S += np.outer(d, d)
    return means, S / len(X) + eps * np.eye(X.shape[1])


def nearest_mahalanobis(x, X, y, eps):
    means, cov = tied_gaussian(X, y, eps)
    return min(mahalanobis_sq(x, m, cov) for m in means.values())


def max_cosine_loop(q, B):
    return max(column_cosine(q, b) for b in B)
