"""Moré-Thuente line search (a port of MINPACK-2 ``dcsrch``/``dcstep``).

Finds a step satisfying the strong Wolfe conditions

    phi(a) <= phi(0) + ftol * a * phi'(0)
    |phi'(a)| <= gtol * |phi'(0)|

by safeguarded cubic/quadratic interpolation on a bracketing interval.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

XTRAPL = 1.1
XTRAPU = 4.0


@dataclass
class LineSearchResult:
    step: float
    value: float
    slope: float
    n_evals: int
    converged: bool
    message: str


def dcstep(stx, fx, dx, sty, fy, dy, stp, fp, dp, brackt, stpmin, stpmax):
    """One safeguarded interpolation step; returns the updated interval and trial."""
    sgnd = dp * (dx / abs(dx))

    if fp > fx:
        # higher function value: minimum is bracketed
        theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp
        s = max(abs(theta), abs(dx), abs(dp))
        gamma = s * np.sqrt((theta / s) ** 2 - (dx / s) * (dp / s))
        if stp < stx:
            gamma = -gamma
        p = (gamma - dx) + theta
        q = ((gamma - dx) + gamma) + dp
        stpc = stx + (p / q) * (stp - stx)
        stpq = stx + ((dx / ((fx - fp) / (stp - stx) + dx)) / 2.0) * (stp - stx)
        if abs(stpc - stx) < abs(stpq - stx):
            stpf = stpc
        else:
            stpf = stpc + (stpq - stpc) / 2.0
        brackt = True
    elif sgnd < 0.0:
        # derivatives of opposite sign: minimum is bracketed
        theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp
        s = max(abs(theta), abs(dx), abs(dp))
        gamma = s * np.sqrt((theta / s) ** 2 - (dx / s) * (dp / s))
        if stp > stx:
            gamma = -gamma
        p = (gamma - dp) + theta
        q = ((gamma - dp) + gamma) + dx
        stpc = stp + (p / q) * (stx - stp)
        stpq = stp + (dp / (dp - dx)) * (stx - stp)
        stpf = stpc if abs(stpc - stp) > abs(stpq - stp) else stpq
        brackt = True
    elif abs(dp) < abs(dx):
        # same sign, derivative magnitude decreases
        theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp
        s = max(abs(theta), abs(dx), abs(dp))
        gamma = s * np.sqrt(max(0.0, (theta / s) ** 2 - (dx / s) * (dp / s)))
        if stp > stx:
            gamma = -gamma
        p = (gamma - dp) + theta
        q = (gamma + (dx - dp)) + gamma
        r = p / q
        if r < 0.0 and gamma != 0.0:
            stpc = stp + r * (stx - stp)
        elif stp > stx:
            stpc = stpmax
        else:
            stpc = stpmin
        stpq = stp + (dp / (dp - dx)) * (stx - stp)
        if brackt:
            stpf = stpc if abs(stpc - stp) < abs(stpq - stp) else stpq
            if stp > stx:
                stpf = min(stp + 0.66 * (sty - stp), stpf)
            else:
                stpf = max(stp + 0.66 * (sty - stp), stpf)
        else:
            stpf = stpc if abs(stpc - stp) > abs(stpq - stp) else stpq
            stpf = min(stpmax, stpf)
            stpf = max(stpmin, stpf)
    else:
        # same sign, derivative magnitude does not decrease
        if brackt:
            theta = 3.0 * (fp - fy) / (sty - stp) + dy + dp
            s = max(abs(theta), abs(dy), abs(dp))
            gamma = s * np.sqrt((theta / s) ** 2 - (dy / s) * (dp / s))
            if stp > sty:
                gamma = -gamma
            p = (gamma - dp) + theta
            q = ((gamma - dp) + gamma) + dy
            stpf = stp + (p / q) * (sty - stp)
        elif stp > stx:
            stpf = stpmax
        else:
            stpf = stpmin

    if fp > fx:
        sty, fy, dy = stp, fp, dp
    else:
        if sgnd < 0.0:
            sty, fy, dy = stx, fx, dx
        stx, fx, dx = stp, fp, dp
    return stx, fx, dx, sty, fy, dy, stpf, brackt


def more_thuente(phi: Callable[[float], Tuple[float, float]], f0: float, g0: float,
                 stp: float = 1.0, ftol: float = 1e-4, gtol: float = 0.9, xtol: float = 1e-10,
                 stpmin: float = 0.0, stpmax: float = 1e10, max_evals: int = 20) -> LineSearchResult:
    """Search along a descent direction.

    ``phi(a)`` returns ``(value, slope)`` at step ``a``; ``f0, g0`` are the
    values at ``a = 0`` and ``g0`` must be negative.
    """
    if g0 >= 0:
        raise ValueError("search direction is not a descent direction")
    if stp <= 0 or not (0 < ftol < 1 and 0 < gtol < 1):
        raise ValueError("invalid line-search parameters")
    brackt = False
    stage = 1
    finit, ginit = f0, g0
    gtest = ftol * ginit
    width = stpmax - stpmin
    width1 = 2.0 * width
    stx, fx, gx = 0.0, finit, ginit
    sty, fy, gy = 0.0, finit, ginit
    stmin, stmax = 0.0, stp + XTRAPU * stp
    best = (np.inf, 0.0, 0.0)

    for k in range(1, max_evals + 1):
        f, g = phi(stp)
        if f < best[0]:
            best = (f, stp, g)
        ftest = finit + stp * gtest
        if stage == 1 and f <= ftest and g >= 0.0:
            stage = 2

        if brackt and (stp <= stmin or stp >= stmax):
            return LineSearchResult(stp, f, g, k, False, "rounding errors prevent progress")
        if brackt and stmax - stmin <= xtol * stmax:
            return LineSearchResult(stp, f, g, k, False, "interval width below xtol")
        if stp == stpmax and f <= ftest and g <= gtest:
            return LineSearchResult(stp, f, g, k, False, "step at upper bound")
        if stp == stpmin and (f > ftest or g >= gtest):
            return LineSearchResult(stp, f, g, k, False, "step at lower bound")
        if f <= ftest and abs(g) <= gtol * (-ginit):
            return LineSearchResult(stp, f, g, k, True, "strong Wolfe conditions satisfied")

        if stage == 1 and f <= fx and f > ftest:
            # modified function until a step with sufficient decrease is found
            fm, fxm, fym = f - stp * gtest, fx - stx * gtest, fy - sty * gtest
            gm, gxm, gym = g - gtest, gx - gtest, gy - gtest
            stx, fxm, gxm, sty, fym, gym, stp, brackt = dcstep(
                stx, fxm, gxm, sty, fym, gym, stp, fm, gm, brackt, stmin, stmax)
            fx, fy = fxm + stx * gtest, fym + sty * gtest
            gx, gy = gxm + gtest, gym + gtest
        else:
            stx, fx, gx, sty, fy, gy, stp, brackt = dcstep(
                stx, fx, gx, sty, fy, gy, stp, f, g, brackt, stmin, stmax)

        if brackt:
            if abs(sty - stx) >= 0.66 * width1:
                stp = stx + 0.5 * (sty - stx)
            width1 = width
            width = abs(sty - stx)
            stmin, stmax = min(stx, sty), max(stx, sty)
        else:
            stmin = stp + XTRAPL * (stp - stx)
            stmax = stp + XTRAPU * (stp - stx)

        stp = min(max(stp, stpmin), stpmax)
        if (brackt and (stp <= stmin or stp >= stmax)) or (brackt and stmax - stmin <= xtol * stmax):
            stp = stx

    f, stp, g = best
    return LineSearchResult(stp, f, g, max_evals, False, "maximum number of evaluations")
