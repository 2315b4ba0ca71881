"""Adaptive rejection Metropolis sampling (ARMS) for one-dimensional targets.

The envelope is the derivative-free piecewise-linear hull of Gilks (1992),
raised to the chord between neighbouring abscissae as in Gilks, Best & Tan
(1995).  For a log-concave target the envelope lies above the density, the
rejection stage returns an exact draw and the Metropolis stage always
accepts.  Otherwise the Metropolis stage keeps the update exact.

The initial abscissae must not depend on the current value of the
variable, or the Metropolis correction is no longer valid.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass


class EnvelopeError(RuntimeError):
    pass


@dataclass
class ArmsStats:
    calls: int = 0
    rejections: int = 0
    mh_proposals: int = 0
    mh_accepts: int = 0
    fallbacks: int = 0
    fallback_accepts: int = 0

    def merge(self, other: "ArmsStats") -> None:
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def as_dict(self) -> dict:
        d = {name: getattr(self, name) for name in self.__dataclass_fields__}
        d["mh_accept_rate"] = self.mh_accepts / self.mh_proposals if self.mh_proposals else None
        d["fallback_accept_rate"] = self.fallback_accepts / self.fallbacks if self.fallbacks else None
        return d


class Envelope:
    """Piecewise-linear upper hull of a log density on [xl, xr].

    On [x_i, x_{i+1}] the hull is max(chord_i, min(chord_{i-1}, chord_{i+1}))
    with missing neighbours dropped; outside the abscissae the nearest
    chord is extended.
    """

    def __init__(self, xs, hs, xl, xr):
        n = len(xs)
        if n < 3:
            raise EnvelopeError("need at least three abscissae")
        self.xs, self.hs, self.xl, self.xr = xs, hs, xl, xr
        sl = []
        ic = []
        for i in range(n - 1):
            dx = xs[i + 1] - xs[i]
            if dx <= 0:
                raise EnvelopeError("abscissae must be strictly increasing")
            s = (hs[i + 1] - hs[i]) / dx
            sl.append(s)
            ic.append(hs[i] - s * xs[i])
        self.sl, self.ic = sl, ic

        segs = []
        # left tail: chord 0 extended
        if xs[0] > xl:
            segs.append((xl, xs[0], sl[0] * xl + ic[0], hs[0]))
        for i in range(n - 1):
            a, b = xs[i], xs[i + 1]
            cuts = [a, b]
            lines = [(sl[i], ic[i])]
            if i >= 1:
                lines.append((sl[i - 1], ic[i - 1]))
            if i <= n - 3:
                lines.append((sl[i + 1], ic[i + 1]))
            m = len(lines)
            for p in range(m):
                sp, cp = lines[p]
                for q in range(p + 1, m):
                    sq, cq = lines[q]
                    if sp != sq:
                        xc = (cq - cp) / (sp - sq)
                        if a < xc < b:
                            cuts.append(xc)
            if len(cuts) > 2:
                cuts.sort()
            w_prev = self._hull(i, a)
            for k in range(1, len(cuts)):
                hi = cuts[k]
                w_hi = self._hull(i, hi)
                if hi > cuts[k - 1]:
                    segs.append((cuts[k - 1], hi, w_prev, w_hi))
                w_prev = w_hi
        if xr > xs[-1]:
            segs.append((xs[-1], xr, hs[-1], sl[-1] * xr + ic[-1]))

        top = -math.inf
        for seg in segs:
            if seg[2] > top:
                top = seg[2]
            if seg[3] > top:
                top = seg[3]
        if not math.isfinite(top):
            raise EnvelopeError("envelope is not finite")
        cum = []
        total = 0.0
        exp, expm1 = math.exp, math.expm1
        for lo, hi, ya, yb in segs:
            d = yb - ya
            ad = d if d >= 0 else -d
            factor = 1.0 if ad < 1e-12 else -expm1(-ad) / ad
            total += (hi - lo) * exp((ya if ya > yb else yb) - top) * factor
            cum.append(total)
        if not (total > 0 and math.isfinite(total)):
            raise EnvelopeError("envelope has no finite mass")
        self.segs, self.cum, self.total = segs, cum, total

    def _hull(self, i, x):
        sl, ic = self.sl, self.ic
        chord = sl[i] * x + ic[i]
        if i >= 1:
            outer = sl[i - 1] * x + ic[i - 1]
            if i + 1 < len(sl):
                other = sl[i + 1] * x + ic[i + 1]
                if other < outer:
                    outer = other
        else:
            outer = sl[i + 1] * x + ic[i + 1]
        return chord if chord > outer else outer

    def value(self, x):
        xs = self.xs
        j = bisect_right(xs, x)
        if j == 0:
            return self.sl[0] * x + self.ic[0]
        if j >= len(xs):
            return self.sl[-1] * x + self.ic[-1]
        return self._hull(j - 1, x)

    def sample(self, rng):
        u = rng.random() * self.total
        k = bisect_right(self.cum, u)
        k = min(k, len(self.segs) - 1)
        lo, hi, ya, yb = self.segs[k]
        d = yb - ya
        v = rng.random()
        if abs(d) < 1e-12:
            s = v
        elif d > 0:
            s = 1.0 + math.log(v + (1.0 - v) * math.exp(-d)) / d
        else:
            s = math.log1p(v * math.expm1(d)) / d
        x = lo + (hi - lo) * min(max(s, 0.0), 1.0)
        return x, ya + d * (x - lo) / (hi - lo)


def arms(logf, xl, xr, init, x_current, rng, max_points=50, max_rejections=200,
         stats: ArmsStats | None = None, h_current=None):
    """One ARMS update of ``x_current`` targeting ``exp(logf)`` on (xl, xr).

    Falls back to a random-walk Metropolis step if the envelope cannot be
    built; the fallback is counted in ``stats``.
    """
    st = stats if stats is not None else ArmsStats()
    st.calls += 1
    xs = sorted(x for x in init if xl < x < xr)
    try:
        hs = [logf(x) for x in xs]
        if not all(math.isfinite(h) for h in hs):
            raise EnvelopeError("log density not finite at an abscissa")
        env = Envelope(xs, hs, xl, xr)
        for _ in range(max_rejections):
            x, wx = env.sample(rng)
            hx = logf(x)
            if not math.isfinite(hx):
                raise EnvelopeError("log density not finite at a proposal")
            if math.log(rng.random()) <= hx - wx:
                break
            st.rejections += 1
            if len(xs) < max_points:
                k = bisect_right(xs, x)
                if (k > 0 and xs[k - 1] == x) or (k < len(xs) and xs[k] == x):
                    continue
                xs.insert(k, x)
                hs.insert(k, hx)
                env = Envelope(xs, hs, xl, xr)
        else:
            raise EnvelopeError("too many rejections")
    except (EnvelopeError, OverflowError, ValueError):
        return _random_walk(logf, xl, xr, x_current, rng, st, h_current)

    hc = logf(x_current) if h_current is None else h_current
    wc = env.value(x_current)
    st.mh_proposals += 1
    log_alpha = hx + min(hc, wc) - hc - min(hx, wx)
    if log_alpha >= 0 or math.log(rng.random()) < log_alpha:
        st.mh_accepts += 1
        return x
    return x_current


def _random_walk(logf, xl, xr, x_current, rng, st, h_current):
    st.fallbacks += 1
    step = 0.05 * (xr - xl)
    x = x_current + step * rng.standard_normal()
    if not xl < x < xr:
        return x_current
    hc = logf(x_current) if h_current is None else h_current
    hx = logf(x)
    if math.isfinite(hx) and math.log(rng.random()) < hx - hc:
        st.fallback_accepts += 1
        return x
    return x_current
