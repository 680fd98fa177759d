"""Vectorised bivariate normal distribution function.

Genz's Gauss-Legendre scheme (Drezner-Wesolowsky with the Genz refinements
for high correlation); absolute error below 1e-15 in double precision for
the 20-point rule, comfortably inside the 1e-7 needed here.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtr

_TWO_PI = 2.0 * np.pi

_GL = {
    6: (np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
        np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970])),
    12: (np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                   0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
         np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                   0.5873179542866171, 0.3678314989981802, 0.1252334085114692])),
    20: (np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                   0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                   0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                   0.1527533871307259]),
         np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                   0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                   0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                   0.07652652113349733])),
}


def _rule(n):
    w, x = _GL[n]
    return np.concatenate([w, w]), np.concatenate([1 - x, 1 + x])


def _bvnu_moderate(h, k, r, n):
    """|r| < 0.925 branch."""
    w, x = _rule(n)
    hk = h * k
    hs = (h * h + k * k) / 2
    asr = np.arcsin(r) / 2
    sn = np.sin(asr[:, None] * x[None, :])
    terms = np.exp((sn * hk[:, None] - hs[:, None]) / (1 - sn * sn))
    return terms @ w * asr / _TWO_PI + ndtr(-h) * ndtr(-k)


def _bvnu_high(h, k, r):
    """|r| >= 0.925 branch."""
    w, x = _rule(20)
    neg = r < 0
    k = np.where(neg, -k, k)
    hk = h * k
    bvn = np.zeros_like(h)
    lt1 = np.abs(r) < 1
    if np.any(lt1):
        hh, kk, rr, hkk = h[lt1], k[lt1], r[lt1], hk[lt1]
        as_ = 1 - rr * rr
        a = np.sqrt(as_)
        bs = (hh - kk) ** 2
        asr = -(bs / as_ + hkk) / 2
        c = (4 - hkk) / 8
        d = (12 - hkk) / 80
        out = np.where(asr > -100, a * np.exp(asr) * (1 - c * (bs - as_) * (1 - d * bs) / 3 + c * d * as_ * as_), 0.0)
        b = np.sqrt(bs)
        with np.errstate(divide="ignore", invalid="ignore"):
            sp = np.sqrt(_TWO_PI) * ndtr(-b / a)
        out = np.where(hkk > -100, out - np.exp(-hkk / 2) * sp * b * (1 - c * bs * (1 - d * bs) / 3), out)
        a2 = a / 2
        xs = (a2[:, None] * x[None, :]) ** 2
        asr2 = -(bs[:, None] / xs + hkk[:, None]) / 2
        valid = asr2 > -100
        sp2 = 1 + c[:, None] * xs * (1 + 5 * d[:, None] * xs)
        rs = np.sqrt(1 - xs)
        ep = np.exp(-(hkk[:, None] / 2) * xs / (1 + rs) ** 2) / rs
        contrib = np.where(valid, np.exp(np.where(valid, asr2, 0.0)) * (sp2 - ep), 0.0)
        bvn[lt1] = (a2 * (contrib @ w) - out) / _TWO_PI
    pos = ~neg
    res = np.empty_like(h)
    res[pos] = bvn[pos] + ndtr(-np.maximum(h[pos], k[pos]))
    # k is still sign-flipped where r < 0
    hn, kn, bn = h[neg], k[neg], bvn[neg]
    lneg = np.where(hn < 0, ndtr(kn) - ndtr(hn), ndtr(-hn) - ndtr(-kn))
    res[neg] = np.where(hn >= kn, -bn, lneg - bn)
    return res


def bvnu(h, k, r):
    """P(X > h, Y > k) for standard bivariate normal with correlation ``r``."""
    h, k, r = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float),
                                  np.asarray(r, dtype=float))
    shape = h.shape
    h, k, r = h.ravel().copy(), k.ravel().copy(), r.ravel().copy()
    out = np.empty_like(h)
    hinf = np.isposinf(h) | np.isposinf(k)
    hneg = np.isneginf(h)
    kneg = np.isneginf(k)
    special = hinf | hneg | kneg
    out[hinf] = 0.0
    both = ~hinf & hneg & kneg
    out[both] = 1.0
    m = ~hinf & hneg & ~kneg
    out[m] = ndtr(-k[m])
    m = ~hinf & kneg & ~hneg
    out[m] = ndtr(-h[m])
    reg = ~special
    ar = np.abs(r)
    for lo, hi, n in ((0.0, 0.3, 6), (0.3, 0.75, 12), (0.75, 0.925, 20)):
        m = reg & (ar >= lo) & (ar < hi)
        if np.any(m):
            out[m] = _bvnu_moderate(h[m], k[m], r[m], n)
    m = reg & (ar >= 0.925)
    if np.any(m):
        out[m] = _bvnu_high(h[m], k[m], r[m])
    return np.clip(out, 0.0, 1.0).reshape(shape)


def bvn_cdf(a, b, r):
    """P(X <= a, Y <= b) for standard bivariate normal with correlation ``r``."""
    return bvnu(-np.asarray(a, dtype=float), -np.asarray(b, dtype=float), r)
