"""Independent reference for the interval grid sequence.

Sizes come from a direct integer scan with exact rational arithmetic
(small M) or exact bisection on the monotone branch (large M). The worst-case
discrepancies are brute-forced over a dense set of centres with mpmath.
"""
from fractions import Fraction
import sys

import mpmath as mp

mp.mp.dps = 30


def h_gt(m, k, eta, b):
    """h(M) > k, exactly: (b(M+1))^{3q} > k^{3q} M^{q+p} for eta = p/q."""
    e = Fraction(1) + Fraction(eta)
    e = e / 3
    b = Fraction(b)
    lhs = (b * (m + 1)) ** e.denominator
    rhs = Fraction(k) ** e.denominator * Fraction(m) ** e.numerator
    return lhs > rhs


def h_ge(m, k, eta, b):
    e = (Fraction(1) + Fraction(eta)) / 3
    b = Fraction(b)
    return (b * (m + 1)) ** e.denominator >= Fraction(k) ** e.denominator * Fraction(m) ** e.numerator


def to_mpf(x):
    x = Fraction(x)
    return mp.mpf(x.numerator) / x.denominator


def h_val(m, eta, b):
    return to_mpf(b) * (m + 1) * mp.power(m, -(1 + to_mpf(eta)) / 3)


def floor_h(m, eta, b):
    k = int(mp.floor(h_val(m, eta, b)))
    while not h_ge(m, k, eta, b):
        k -= 1
    while h_ge(m, k + 1, eta, b):
        k += 1
    return k


def admissible(m, eta, b):
    k = floor_h(m, eta, b)
    return (not h_gt(m - 1, k, eta, b)) and h_gt(m, k, eta, b)


def sizes(eta, b, levels, scan_limit=20000):
    out = [1]
    while len(out) < levels:
        m = out[-1] + 1
        found = None
        while m < out[-1] + scan_limit:
            if admissible(m, eta, b):
                found = m
                break
            m += 1
        if found is None:
            # monotone branch: first M with h(M) > ceil(h(m0))
            m0 = m - 1
            k = floor_h(m0, eta, b) + 1
            lo, hi = m0, m0 + 1
            while not h_gt(hi, k, eta, b):
                lo, hi = hi, m0 + 2 * (hi - m0)
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if h_gt(mid, k, eta, b):
                    hi = mid
                else:
                    lo = mid
            assert admissible(hi, eta, b)
            found = hi
        out.append(found)
    return out


def brute_sup(m_size, eta, b, centres=4001):
    """Sup over sampled centres p in [r, 1-r] of the two scaled gaps."""
    M = m_size
    r = mp.mpf(b) / 2 * mp.power(M, -(1 + eta) / 3)
    lo, hi = r, 1 - r
    best_c = best_q = mp.mpf(0)
    pts = [mp.mpf(i) / (M + 1) for i in range(1, M + 1)]
    for s in range(centres):
        p = lo + (hi - lo) * s / (centres - 1)
        inside = [x for x in pts if abs(x - p) < r]
        c = abs(mp.mpf(len(inside)) / M - 2 * r)
        q = abs(sum((x - p) ** 2 for x in inside) / M - 2 * r ** 3 / 3)
        best_c = max(best_c, c)
        best_q = max(best_q, q)
    e = (1 + eta) / 3
    return best_c * mp.power(M, e), best_q * mp.power(M, 1 + eta)


if __name__ == "__main__":
    for eta in ["0.3", "0.5", "0.66", "1", "1.9"]:
        s = sizes(Fraction(eta), 1, 8)
        print("sizes", eta, s)
    for eta in ["0.3", "0.5", "1"]:
        s = sizes(Fraction(eta), 1, 7)
        for lvl in range(3, 8):
            c, q = brute_sup(s[lvl - 1], to_mpf(Fraction(eta)), 1)
            print("sup", eta, lvl, s[lvl - 1], mp.nstr(c, 10), mp.nstr(q, 10))
    sys.stdout.flush()
