# Compiled primitives shared by the model and the event loop.
from __future__ import annotations

import math

import numpy as np
from numba import njit

GMM = 0
TMM = 1
HS = 2


@njit(cache=True, nogil=True)
def collide_inplace(V, i, j, sigma):
    d = V.shape[1]
    s = 0.0
    for k in range(d):
        diff = V[i, k] - V[j, k]
        s += diff * diff
    half = 0.5 * math.sqrt(s)
    for k in range(d):
        c = 0.5 * (V[i, k] + V[j, k])
        V[i, k] = c + half * sigma[k]
        V[j, k] = c - half * sigma[k]


@njit(cache=True, nogil=True)
def _normals(U, pos, out):
    d = out.shape[0]
    k = 0
    while k < d:
        u1 = 1.0 - U[pos]
        u2 = U[pos + 1]
        pos += 2
        r = math.sqrt(-2.0 * math.log(u1))
        out[k] = r * math.cos(2.0 * math.pi * u2)
        if k + 1 < d:
            out[k + 1] = r * math.sin(2.0 * math.pi * u2)
        k += 2
    return pos


@njit(cache=True, nogil=True)
def inverse_cdf(theta_tab, cdf_tab, u):
    lo = 0
    hi = cdf_tab.shape[0] - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cdf_tab[mid] <= u:
            lo = mid
        else:
            hi = mid
    span = cdf_tab[hi] - cdf_tab[lo]
    if span <= 0.0:
        return theta_tab[lo]
    w = (u - cdf_tab[lo]) / span
    return theta_tab[lo] + w * (theta_tab[hi] - theta_tab[lo])


@njit(cache=True, nogil=True)
def sigma_from_uniforms(kind, uhat, theta_tab, cdf_tab, U, pos, out):
    """Fill ``out`` with a unit vector on the half-sphere around ``uhat``.

    Consumes ``sigma_uniforms(d)`` entries of ``U`` at most; returns the new
    read position.
    """
    d = out.shape[0]
    if kind == TMM:
        theta = inverse_cdf(theta_tab, cdf_tab, U[pos])
        pos += 1
        pos = _normals(U, pos, out)
        dot = 0.0
        for k in range(d):
            dot += out[k] * uhat[k]
        nrm = 0.0
        for k in range(d):
            out[k] -= dot * uhat[k]
            nrm += out[k] * out[k]
        nrm = math.sqrt(nrm)
        ct = math.cos(theta)
        st = math.sin(theta)
        if nrm > 0.0:
            for k in range(d):
                out[k] = ct * uhat[k] + st * out[k] / nrm
        else:
            for k in range(d):
                out[k] = uhat[k]
        return pos
    pos = _normals(U, pos, out)
    nrm = 0.0
    dot = 0.0
    for k in range(d):
        nrm += out[k] * out[k]
        dot += out[k] * uhat[k]
    nrm = math.sqrt(nrm)
    sgn = 1.0 if dot >= 0.0 else -1.0
    for k in range(d):
        out[k] = sgn * out[k] / nrm
    return pos


def sigma_uniforms(d: int) -> int:
    """Upper bound on the uniforms one sigma draw consumes."""
    return 2 * ((d + 1) // 2) + 1
