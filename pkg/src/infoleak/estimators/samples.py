"""Paired attribute/feature samples with a train/test partition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidParameterError, ShapeMismatchError


@dataclass(frozen=True)
class SampleSet:
    """Rows of (s, x) plus disjoint train and test index sets covering all rows.

    Parameters
    ----------
    s : ndarray, shape (n, d_s)
    x : ndarray, shape (n, d_x)
    train_idx, test_idx : ndarray of int
    """

    s: np.ndarray
    x: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if x.ndim == 1:
            x = x[:, None]
        if s.shape[0] != x.shape[0]:
            raise ShapeMismatchError(f"s has {s.shape[0]} rows, x has {x.shape[0]}")
        tr = np.asarray(self.train_idx, dtype=np.int64)
        te = np.asarray(self.test_idx, dtype=np.int64)
        both = np.concatenate([tr, te])
        if len(both) != s.shape[0] or not np.array_equal(np.sort(both), np.arange(s.shape[0])):
            raise InvalidParameterError("train and test indices must be disjoint and cover every row")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "train_idx", tr)
        object.__setattr__(self, "test_idx", te)

    @classmethod
    def split(cls, s, x, train_fraction: float = 0.7, rng=None) -> "SampleSet":
        """Partition rows; the first ``round(n * train_fraction)`` go to training.

        With ``rng`` the rows are shuffled first.
        """
        if not 0 < train_fraction <= 1:
            raise InvalidParameterError("train_fraction must lie in (0, 1]")
        n = np.asarray(x).shape[0]
        order = np.arange(n) if rng is None else rng.permutation(n)
        k = int(round(n * train_fraction))
        return cls(s, x, np.sort(order[:k]), np.sort(order[k:]))

    def __len__(self):
        return self.s.shape[0]

    @property
    def train(self):
        return self.s[self.train_idx], self.x[self.train_idx]

    @property
    def test(self):
        return self.s[self.test_idx], self.x[self.test_idx]
