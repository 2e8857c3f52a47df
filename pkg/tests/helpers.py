"""Fixture builders shared across test modules (not oracles)."""
import numpy as np

from pillarmkl import dataio
from pillarmkl.kernels import KernelParams, gamma_heuristic, kernel_gram, normalize_kernel


def split_kernels(pillars, split):
    """Normalised train/train and matching test/train RBF blocks per pillar."""
    tr, te = split.train_indices, split.test_indices
    ktr, kte = [], []
    for x in pillars:
        x = np.asarray(x, dtype=np.float64)
        p = KernelParams("rbf", gamma_heuristic(x[tr]))
        k, scale = normalize_kernel(kernel_gram(x[tr], x[tr], p))
        ktr.append(k)
        kte.append(kernel_gram(x[te], x[tr], p) / scale)
    return ktr, kte


def synthetic(subsets, n_samples=300, n_classes=4, dims=8, noise=1.0, seed=3, split=0):
    spec = dataio.SyntheticSpec(n_samples, n_classes,
                                tuple(dataio.PillarSpec(dims, s, noise) for s in subsets), seed)
    pillars, labels, splits = dataio.generate_synthetic_pillars(spec)
    sp = splits[split]
    ktr, kte = split_kernels(pillars, sp)
    y = labels.labels
    return ktr, kte, y[sp.train_indices], y[sp.test_indices]
