"""Linear probes: one-vs-rest ridge regression on standardized features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .guidance import GuidanceBundle
from .sampling import to_zero_based


@dataclass
class LinearProbe:
    mean: np.ndarray
    std: np.ndarray
    weight: np.ndarray     # (F + 1, K)

    def scores(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, np.float64) - self.mean) / self.std
        return np.hstack([z, np.ones((z.shape[0], 1))]) @ self.weight

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.scores(x).argmax(axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(x) == np.asarray(y)).mean())


def fit_probe(x: np.ndarray, y: np.ndarray, n_classes: int, ridge: float = 1.0) -> LinearProbe:
    x = np.asarray(x, np.float64)
    mean, std = x.mean(axis=0), x.std(axis=0) + 1e-8
    z = np.hstack([(x - mean) / std, np.ones((x.shape[0], 1))])
    targets = np.eye(n_classes)[np.asarray(y)]
    reg = ridge * np.eye(z.shape[1])
    reg[-1, -1] = 0.0
    # solve in the smaller of the primal and dual forms
    if z.shape[1] <= z.shape[0]:
        w = np.linalg.solve(z.T @ z + reg, z.T @ targets)
    else:
        w = z.T @ np.linalg.solve(z @ z.T + ridge * np.eye(z.shape[0]), targets)
    return LinearProbe(mean, std, w)


def guidance_features(bundle: GuidanceBundle) -> np.ndarray:
    """Token-mean of every guidance section, concatenated."""
    parts = [bundle.encoder_tokens.mean(axis=0), bundle.ar_tokens.mean(axis=0)]
    parts += [s.mean(axis=0) for s in bundle.layer_states.values()]
    return np.concatenate(parts).astype(np.float64)


def dense_features(latents: np.ndarray, t_past: int, t0: int = 1) -> np.ndarray:
    """Flattened latents of the observed past frames of the dense window."""
    idx = to_zero_based(list(range(t0, t0 + t_past)))
    return latents[idx].reshape(-1).astype(np.float64)
