"""Brute-force oracle computations for the loss suite.

Everything here is written with explicit python loops and math.* calls so the
values are computed independently of torch.
"""

from __future__ import annotations

import math

import numpy as np
import torch


def mean_abs_diff(x, y) -> float:
    xf = np.asarray(x, dtype=np.float64).ravel()
    yf = np.asarray(y, dtype=np.float64).ravel()
    assert xf.shape == yf.shape
    total = 0.0
    for a, b in zip(xf, yf):
        total += math.fabs(a - b)
    return total / len(xf)


def softmax_nll(logits, index: int) -> float:
    """-log softmax(logits)[index] via explicit exponentials."""
    vals = [float(v) for v in np.asarray(logits, dtype=np.float64).ravel()]
    denom = sum(math.exp(v) for v in vals)
    return -math.log(math.exp(vals[index]) / denom)


def batch_softmax_nll(logits_rows, indices) -> float:
    rows = np.asarray(logits_rows, dtype=np.float64)
    total = 0.0
    for row, idx in zip(rows, indices):
        total += softmax_nll(row, int(idx))
    return total / rows.shape[0]


class StubDiscriminator:
    """Deterministic linear stand-in for the discriminator.

    Maps a flattened image through fixed matrices so oracle values can be
    recomputed by hand; shaped like the real module's (realness, class) output.
    """

    def __init__(self, n_pixels: int, class_count: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.wr = rng.normal(0, 0.2, size=(2, n_pixels))
        self.br = rng.normal(0, 0.1, size=2)
        self.wc = rng.normal(0, 0.2, size=(class_count, n_pixels))
        self.bc = rng.normal(0, 0.1, size=class_count)

    def __call__(self, x: torch.Tensor):
        flat = x.reshape(x.shape[0], -1).double()
        r = flat @ torch.from_numpy(self.wr.T) + torch.from_numpy(self.br)
        c = flat @ torch.from_numpy(self.wc.T) + torch.from_numpy(self.bc)
        return r.to(x.dtype), c.to(x.dtype)

    def logits_np(self, x: np.ndarray):
        """Same map in loop form for the oracle side."""
        rows_r, rows_c = [], []
        for sample in np.asarray(x, dtype=np.float64):
            flat = sample.ravel()
            r = [sum(wi * fi for wi, fi in zip(wrow, flat)) + b
                 for wrow, b in zip(self.wr, self.br)]
            c = [sum(wi * fi for wi, fi in zip(wrow, flat)) + b
                 for wrow, b in zip(self.wc, self.bc)]
            rows_r.append(r)
            rows_c.append(c)
        return np.array(rows_r), np.array(rows_c)
