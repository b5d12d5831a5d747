"""Exact scalar arithmetic for the lab: rationals and the field Q(sqrt 2).

All welfare bookkeeping in this package is exact.  Plain rationals are
``fractions.Fraction``; the handful of irrational constants that show up in
dissolution thresholds and competitive-ratio targets (1+sqrt2, 1/(6+4 sqrt2),
...) live in Q(sqrt 2) and are represented by :class:`Quad`, a pair of
rational coordinates (a, b) standing for a + b*sqrt(2).

Comparisons on Quad values are exact: the sign of a + b*sqrt(2) is decided by
squaring, never by floating point.  Arithmetic that lands back on the rational
line (b == 0) is normalised to a plain Fraction by :func:`quad`, so purely
rational computations never see Quad objects.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Union

Scalar = Union[int, Fraction, "Quad"]


def _sign_pair(a: Fraction, b: Fraction) -> int:
    """Exact sign of a + b*sqrt(2)."""
    if b == 0:
        return (a > 0) - (a < 0)
    if a == 0:
        return 1 if b > 0 else -1
    if a > 0 and b > 0:
        return 1
    if a < 0 and b < 0:
        return -1
    aa, bb2 = a * a, 2 * b * b
    if aa == bb2:
        # would mean (a/b)^2 == 2 for rationals, impossible
        raise ArithmeticError("sqrt(2) cannot equal a rational")
    if a > 0:  # b < 0: sign(a - |b| sqrt2) = sign(a^2 - 2 b^2)
        return 1 if aa > bb2 else -1
    return 1 if bb2 > aa else -1  # a < 0 < b


class Quad:
    """An element a + b*sqrt(2) of Q(sqrt 2), with b != 0 by construction.

    Build values with :func:`quad`; it returns a plain Fraction whenever the
    sqrt(2) coordinate vanishes, which keeps mixed arithmetic closed over
    {int, Fraction, Quad}.
    """

    __slots__ = ("a", "b")

    def __init__(self, a, b):
        object.__setattr__(self, "a", Fraction(a))
        object.__setattr__(self, "b", Fraction(b))

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("Quad is immutable")

    # -- coercion -----------------------------------------------------------

    @staticmethod
    def _coords(x) -> tuple[Fraction, Fraction] | None:
        if isinstance(x, Quad):
            return x.a, x.b
        if isinstance(x, (int, Fraction)):
            return Fraction(x), Fraction(0)
        return None

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        co = self._coords(other)
        if co is None:
            return NotImplemented
        return quad(self.a + co[0], self.b + co[1])

    __radd__ = __add__

    def __sub__(self, other):
        co = self._coords(other)
        if co is None:
            return NotImplemented
        return quad(self.a - co[0], self.b - co[1])

    def __rsub__(self, other):
        co = self._coords(other)
        if co is None:
            return NotImplemented
        return quad(co[0] - self.a, co[1] - self.b)

    def __mul__(self, other):
        co = self._coords(other)
        if co is None:
            return NotImplemented
        a, b = co
        return quad(self.a * a + 2 * self.b * b, self.a * b + self.b * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        co = self._coords(other)
        if co is None:
            return NotImplemented
        a, b = co
        norm = a * a - 2 * b * b
        if norm == 0:
            raise ZeroDivisionError("division by zero in Q(sqrt 2)")
        # multiply by the conjugate (a - b sqrt2) / norm
        return quad(
            (self.a * a - 2 * self.b * b) / norm,
            (self.b * a - self.a * b) / norm,
        )

    def __rtruediv__(self, other):
        co = self._coords(other)
        if co is None:
            return NotImplemented
        norm = self.a * self.a - 2 * self.b * self.b
        a, b = co
        return quad(
            (a * self.a - 2 * b * self.b) / norm,
            (b * self.a - a * self.b) / norm,
        )

    def __neg__(self):
        return Quad(-self.a, -self.b)

    def __pos__(self):
        return self

    def __abs__(self):
        return -self if _sign_pair(self.a, self.b) < 0 else self

    # -- ordering -----------------------------------------------------------

    def _cmp(self, other) -> int | None:
        co = self._coords(other)
        if co is None:
            return None
        return _sign_pair(self.a - co[0], self.b - co[1])

    def __eq__(self, other):
        c = self._cmp(other)
        return NotImplemented if c is None else c == 0

    def __lt__(self, other):
        c = self._cmp(other)
        return NotImplemented if c is None else c < 0

    def __le__(self, other):
        c = self._cmp(other)
        return NotImplemented if c is None else c <= 0

    def __gt__(self, other):
        c = self._cmp(other)
        return NotImplemented if c is None else c > 0

    def __ge__(self, other):
        c = self._cmp(other)
        return NotImplemented if c is None else c >= 0

    def __hash__(self):
        return hash(("fhglab.Quad", self.a, self.b))

    def __bool__(self):
        return True  # b != 0, hence the value is nonzero

    def __float__(self):
        return float(self.a) + float(self.b) * 1.4142135623730951

    def __repr__(self):
        return f"Quad({self.a!r}, {self.b!r})"

    def __str__(self):
        return scalar_to_str(self)


def quad(a, b) -> Scalar:
    """a + b*sqrt(2), normalised to Fraction when b == 0."""
    b = Fraction(b)
    if b == 0:
        return Fraction(a)
    return Quad(a, b)


SQRT2 = Quad(0, 1)

# dissolution-threshold constants and competitive-ratio targets, all exact
THRESHOLD_BETA = Quad(1, 1)  # 1 + sqrt(2), the spec's pinned dissolve factor
OPT_THRESHOLD_BETA = Quad(1, Fraction(1, 2))  # 1 + sqrt(2)/2, attains the targets
MATCHING_DISSOLUTION_BOUND = Quad(3, -2)  # 1/(3+2 sqrt2) = 3 - 2 sqrt2
FHG_DISSOLUTION_BOUND = Quad(Fraction(3, 2), -1)  # 1/(6+4 sqrt2) = (3-2 sqrt2)/2


def scalar_sign(x: Scalar) -> int:
    if isinstance(x, Quad):
        return _sign_pair(x.a, x.b)
    return (x > 0) - (x < 0)


def scalar_to_float(x: Scalar) -> float:
    return float(x)


def scalar_to_str(x: Scalar) -> str:
    """Canonical exact string: "p/q" or "p/q+r/s*sqrt2"."""
    if isinstance(x, Quad):
        rat = f"{x.a.numerator}/{x.a.denominator}"
        sep = "+" if x.b >= 0 else "-"
        babs = abs(x.b)
        return f"{rat}{sep}{babs.numerator}/{babs.denominator}*sqrt2"
    f = Fraction(x)
    return f"{f.numerator}/{f.denominator}"


def parse_scalar(s: str) -> Scalar:
    """Inverse of :func:`scalar_to_str`; also accepts bare integers like "5"."""
    s = s.strip()
    if "sqrt2" in s:
        body = s[: s.rindex("*sqrt2")]
        # split rational part from the sqrt2 coefficient at the last +/- that
        # is not inside a fraction (fractions never contain signs after pos 0)
        for k in range(len(body) - 1, 0, -1):
            if body[k] in "+-" and body[k - 1] != "/":
                a = Fraction(body[:k])
                b = Fraction(body[k:].replace("+", "", 1)) if body[k] == "+" else -Fraction(body[k + 1 :])
                return quad(a, b)
        raise ValueError(f"cannot parse scalar {s!r}")
    return Fraction(s)
