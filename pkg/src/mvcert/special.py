"""Upper-half Beta masses used by the truncated-Beta e-process."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import betainc, betaln

LOG2 = math.log(2.0)


def log_upper_half_beta(a, b):
    """``log ∫_{1/2}^1 t^(a-1) (1-t)^(b-1) dt`` (vectorised).

    Uses ``1 - I_{1/2}(a, b) = I_{1/2}(b, a)`` so the upper tail never comes
    from a subtraction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("Beta shapes must be positive")
    with np.errstate(divide="ignore"):
        out = betaln(a, b) + np.log(betainc(b, a, 0.5))
    return out if out.ndim else float(out)


def upper_half_beta(a: float, b: float) -> float:
    return math.exp(log_upper_half_beta(a, b))


def reg_inc_beta_at_half(a: float, b: float) -> float:
    """Regularized incomplete beta ``I_{1/2}(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("Beta shapes must be positive")
    return float(betainc(a, b, 0.5))


def beta_step_ratios(a, b, log_u=None):
    """One-round e-value factors ``(rho_leader, rho_rival)`` at shapes ``(a, b)``.

    ``rho_leader = 2 U(a+1, b)/U(a, b)`` and ``rho_rival = 2 U(a, b+1)/U(a, b)``
    where ``U`` is the upper-half Beta mass. They come from the recurrence
    ``U(a+1, b) = (a U(a, b) + 2^-(a+b)) / (a+b)`` together with
    ``U(a, b) = U(a+1, b) + U(a, b+1)``, so only ``U(a, b)`` is evaluated and
    the two factors sum to exactly 2 in exact arithmetic.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if log_u is None:
        log_u = log_upper_half_beta(a, b)
    tot = a + b
    boundary = np.exp(-tot * LOG2 - np.log(tot) - log_u)
    rho_lead = 2.0 * (a / tot + boundary)
    rho_rival = 2.0 * (b / tot - boundary)
    bad = rho_rival <= 0.0
    if np.any(bad):
        # cancellation: fall back to a direct ratio
        direct = 2.0 * np.exp(log_upper_half_beta(a, b + 1.0) - log_u)
        rho_rival = np.where(bad, direct, rho_rival)
    if rho_lead.ndim == 0:
        return float(rho_lead), float(rho_rival)
    return rho_lead, rho_rival
