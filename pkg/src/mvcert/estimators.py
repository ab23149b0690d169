"""scikit-learn style wrappers around the certificate and tilt functions.

Nothing here is learned from data: ``fit`` only validates input, so the
classes exist to plug into pipelines and parameter grids. Requires the
optional ``scikit-learn`` dependency.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .core import CertificateConfig
from .mmc import PRIOR_PRESETS, run_certificate
from .tilt import TiltParams, temper, ttrl_tilt


def _vote_rows(X) -> list[list]:
    rows = [list(r) for r in X]
    if not rows:
        raise ValueError("X must contain at least one row of votes")
    return rows


class MajorityCertifier(BaseEstimator):
    """Certify the majority answer of each row of votes.

    Parameters
    ----------
    epsilon : float
        Target error level of the certificate.
    budget : int
        Maximum number of votes consumed per row.
    m : int
        Size of the tracked top set (leader plus ``m - 1`` runner-ups).
    prior : str
        One of ``jeffreys``, ``laplace``, ``point-shared``, ``point-ratio``.
    labels : sequence, optional
        Declared label universe.

    Attributes
    ----------
    outcomes_ : list of CertificateOutcome
        Result of the last call to :meth:`fit`, one per row.
    """

    def __init__(self, epsilon=0.1, budget=64, m=2, prior="jeffreys", labels=None):
        self.epsilon = epsilon
        self.budget = budget
        self.m = m
        self.prior = prior
        self.labels = labels

    def _config(self) -> CertificateConfig:
        if self.prior not in PRIOR_PRESETS:
            raise ValueError(f"unknown prior {self.prior!r}; choose from {sorted(PRIOR_PRESETS)}")
        return CertificateConfig(self.epsilon, self.budget, self.m, PRIOR_PRESETS[self.prior](), self.labels)

    def _run(self, X):
        config = self._config()
        return [run_certificate(row, config) for row in _vote_rows(X)]

    def fit(self, X, y=None):
        self.outcomes_ = self._run(X)
        return self

    def predict(self, X) -> np.ndarray:
        """Majority label per row; ``None`` for an empty row."""
        return np.array([o.winner for o in self._run(X)], dtype=object)

    def transform(self, X) -> np.ndarray:
        """Per row: ``[stopped, rounds_used, eps_hat]``."""
        return np.array([[float(o.stopped), o.rounds_used, o.eps_hat] for o in self._run(X)])

    def score(self, X, y) -> float:
        """Accuracy of the certified winners among stopped rows (nan if none stopped)."""
        outs = self._run(X)
        hits = [o.winner == t for o, t in zip(outs, y) if o.stopped]
        return float(np.mean(hits)) if hits else float("nan")


class TiltTransformer(TransformerMixin, BaseEstimator):
    """Row-wise tempering or exponential tilting of probability vectors.

    ``mode="temper"`` raises each row to ``kappa = beta/(beta-1)``;
    ``mode="ttrl"`` tilts each row towards its own argmax with strength
    ``1/beta``.
    """

    def __init__(self, beta=2.0, mode="temper"):
        self.beta = beta
        self.mode = mode

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.mode == "temper":
            kappa = TiltParams.for_temper(self.beta).kappa
            return np.array([temper(row, kappa).probs for row in X])
        if self.mode == "ttrl":
            TiltParams.for_tilt(self.beta)
            return np.array([ttrl_tilt(row, int(np.argmax(row)), self.beta).probs for row in X])
        raise ValueError(f"unknown mode {self.mode!r}")
