"""Scalar-loop reference implementations used as independent oracles."""
from __future__ import annotations

import math

import numpy as np


def _points(a):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, a.shape[-3], a.shape[-2], 3)


def dist(p, g):
    return math.sqrt(sum((p[i] - g[i]) ** 2 for i in range(3)))


def ade_loop(pred, gt):
    p, g = _points(pred), _points(gt)
    tot, n = 0.0, 0
    for b in range(p.shape[0]):
        for t in range(p.shape[1]):
            for j in range(p.shape[2]):
                tot += dist(p[b, t, j], g[b, t, j])
                n += 1
    return tot / n


def fde_loop(pred, gt):
    p, g = _points(pred), _points(gt)
    tot, n = 0.0, 0
    for b in range(p.shape[0]):
        for j in range(p.shape[2]):
            tot += dist(p[b, -1, j], g[b, -1, j])
            n += 1
    return tot / n


def accuracy_loop(pred, gt, tau=0.05):
    p, g = _points(pred), _points(gt)
    hits, n = 0, 0
    for b in range(p.shape[0]):
        for t in range(p.shape[1]):
            for j in range(p.shape[2]):
                hits += dist(p[b, t, j], g[b, t, j]) < tau
                n += 1
    return hits / n


def _tokens(a):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, a.shape[-1])


def fd_loop(pred, tgt):
    p, t = _tokens(pred), _tokens(tgt)
    return sum(math.sqrt(sum((p[i, k] - t[i, k]) ** 2 for k in range(p.shape[1]))) for i in range(p.shape[0])) / p.shape[0]


def sl1_loop(pred, tgt, beta=1.0):
    p, t = _tokens(pred), _tokens(tgt)
    tot = 0.0
    for i in range(p.shape[0]):
        for k in range(p.shape[1]):
            d = abs(p[i, k] - t[i, k])
            tot += 0.5 * d * d / beta if d < beta else d - 0.5 * beta
    return tot / p.size


def cd_loop(pred, tgt, eps=1e-8):
    p, t = _tokens(pred), _tokens(tgt)
    tot = 0.0
    for i in range(p.shape[0]):
        dot = sum(p[i, k] * t[i, k] for k in range(p.shape[1]))
        np_ = math.sqrt(sum(v * v for v in p[i]))
        nt = math.sqrt(sum(v * v for v in t[i]))
        tot += 1.0 - dot / (np_ * nt + eps)
    return tot / p.shape[0]
