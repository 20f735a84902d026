"""Exact symbolic algebra for phase-space functions of a three-rotor chain.

The closed term class is

    sum of  c * p1^n1 * p2^l * p3^n3 * exp(i (k1 q1 + k2 q2 + k3 q3))

with exact complex-rational coefficients ``c``, non-negative integers
``n1, n3``, an arbitrary integer ``l`` (negative powers of the middle
momentum arise from inverting the fast transport operator), and integer
wave vectors ``(k1, k2, k3)``.  All operators used by the averaging
machinery (multiplication, partial derivatives, the q2-average, the
transport inverse) map this class into itself, so every manipulation is
performed with zero rounding error.  Floating point enters only at
evaluation time.
"""

from __future__ import annotations

import json
from fractions import Fraction
from typing import Iterable, Iterator, Mapping

import numpy as np

__all__ = [
    "RationalComplex",
    "PhasePoly",
    "NonZeroMean",
    "PoleAtZero",
    "VARIABLES",
]

VARIABLES = ("q1", "q2", "q3", "p1", "p2", "p3")


class NonZeroMean(ValueError):
    """Raised when the transport inverse is applied to a function with k2 = 0 content."""


class PoleAtZero(ZeroDivisionError):
    """Raised when evaluating a negative power of p2 at p2 = 0."""


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        # floats are accepted only when they are exact binary rationals the
        # caller really meant (e.g. 0.5); Fraction(float) is exact.
        return Fraction(x)
    raise TypeError(f"cannot interpret {x!r} as an exact rational")


class RationalComplex:
    """A complex number with exact rational real and imaginary parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = _as_fraction(re)
        self.im = _as_fraction(im)

    def __add__(self, other: "RationalComplex") -> "RationalComplex":
        return RationalComplex(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "RationalComplex") -> "RationalComplex":
        return RationalComplex(self.re - other.re, self.im - other.im)

    def __neg__(self) -> "RationalComplex":
        return RationalComplex(-self.re, -self.im)

    def __mul__(self, other) -> "RationalComplex":
        if isinstance(other, RationalComplex):
            return RationalComplex(
                self.re * other.re - self.im * other.im,
                self.re * other.im + self.im * other.re,
            )
        f = _as_fraction(other)
        return RationalComplex(self.re * f, self.im * f)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "RationalComplex":
        if isinstance(other, RationalComplex):
            d = other.re * other.re + other.im * other.im
            if d == 0:
                raise ZeroDivisionError("division by zero RationalComplex")
            return RationalComplex(
                (self.re * other.re + self.im * other.im) / d,
                (self.im * other.re - self.re * other.im) / d,
            )
        f = _as_fraction(other)
        return RationalComplex(self.re / f, self.im / f)

    def conjugate(self) -> "RationalComplex":
        return RationalComplex(self.re, -self.im)

    def is_zero(self) -> bool:
        return self.re == 0 and self.im == 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, RationalComplex):
            return NotImplemented
        return self.re == other.re and self.im == other.im

    def __hash__(self):
        return hash((self.re, self.im))

    def __complex__(self) -> complex:
        return complex(float(self.re), float(self.im))

    def __repr__(self):
        return f"RationalComplex({self.re!r}, {self.im!r})"


_I = RationalComplex(0, 1)

# term key: (n1, l, n3, k1, k2, k3)
Key = tuple


class PhasePoly:
    """Canonical finite sum of momentum-monomial times Fourier-mode terms.

    Instances are immutable after construction; the term map is merged and
    stripped of zero coefficients, so structural equality is semantic
    equality.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[Key, RationalComplex] | None = None):
        merged: dict[Key, RationalComplex] = {}
        if terms:
            for key, coeff in terms.items():
                n1, l, n3, k1, k2, k3 = key
                if n1 < 0 or n3 < 0:
                    raise ValueError(f"negative exponent of p1/p3 in term {key}")
                if coeff.is_zero():
                    continue
                if key in merged:
                    s = merged[key] + coeff
                    if s.is_zero():
                        del merged[key]
                    else:
                        merged[key] = s
                else:
                    merged[key] = coeff
        self._terms = merged

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls) -> "PhasePoly":
        return cls()

    @classmethod
    def constant(cls, c) -> "PhasePoly":
        coeff = c if isinstance(c, RationalComplex) else RationalComplex(c)
        return cls({(0, 0, 0, 0, 0, 0): coeff})

    @classmethod
    def momentum(cls, n1: int = 0, l: int = 0, n3: int = 0, coeff=1) -> "PhasePoly":
        c = coeff if isinstance(coeff, RationalComplex) else RationalComplex(coeff)
        return cls({(n1, l, n3, 0, 0, 0): c})

    @classmethod
    def exp_wave(cls, k1: int, k2: int, k3: int, coeff=1) -> "PhasePoly":
        c = coeff if isinstance(coeff, RationalComplex) else RationalComplex(coeff)
        return cls({(0, 0, 0, k1, k2, k3): c})

    @classmethod
    def cos_wave(cls, k1: int, k2: int, k3: int, coeff=1) -> "PhasePoly":
        """coeff * cos(k1 q1 + k2 q2 + k3 q3) in the exponential basis."""
        c = coeff if isinstance(coeff, RationalComplex) else RationalComplex(coeff)
        half = c * Fraction(1, 2)
        return cls.exp_wave(k1, k2, k3, half) + cls.exp_wave(-k1, -k2, -k3, half)

    @classmethod
    def sin_wave(cls, k1: int, k2: int, k3: int, coeff=1) -> "PhasePoly":
        """coeff * sin(k1 q1 + k2 q2 + k3 q3) in the exponential basis."""
        c = coeff if isinstance(coeff, RationalComplex) else RationalComplex(coeff)
        halfi = c * RationalComplex(0, Fraction(-1, 2))  # 1/(2i) = -i/2
        return cls.exp_wave(k1, k2, k3, halfi) + cls.exp_wave(-k1, -k2, -k3, -halfi)

    # -- basic queries -----------------------------------------------------

    @property
    def terms(self) -> Mapping[Key, RationalComplex]:
        return self._terms

    def is_zero(self) -> bool:
        return not self._terms

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[tuple[Key, RationalComplex]]:
        return iter(self._terms.items())

    def degree(self) -> int | None:
        """Maximal power of p2 present, or None for the zero polynomial."""
        if not self._terms:
            return None
        return max(key[1] for key in self._terms)

    def coefficient(self, key: Key) -> RationalComplex:
        return self._terms.get(tuple(key), RationalComplex())

    def is_hermitian(self) -> bool:
        """True when the value is real for all real (q, p).

        Requires the coefficient at wave -k to be the conjugate of the one
        at wave k, term by term.
        """
        for (n1, l, n3, k1, k2, k3), coeff in self._terms.items():
            mirror = self._terms.get((n1, l, n3, -k1, -k2, -k3))
            if mirror is None or mirror != coeff.conjugate():
                return False
        return True

    # -- algebra -----------------------------------------------------------

    def __add__(self, other: "PhasePoly") -> "PhasePoly":
        if not isinstance(other, PhasePoly):
            return NotImplemented
        out = dict(self._terms)
        for key, coeff in other._terms.items():
            if key in out:
                s = out[key] + coeff
                if s.is_zero():
                    del out[key]
                else:
                    out[key] = s
            else:
                out[key] = coeff
        res = PhasePoly.__new__(PhasePoly)
        res._terms = out
        return res

    def __sub__(self, other: "PhasePoly") -> "PhasePoly":
        return self + (-other)

    def __neg__(self) -> "PhasePoly":
        res = PhasePoly.__new__(PhasePoly)
        res._terms = {k: -c for k, c in self._terms.items()}
        return res

    def __mul__(self, other) -> "PhasePoly":
        if isinstance(other, PhasePoly):
            out: dict[Key, RationalComplex] = {}
            for (a1, al, a3, j1, j2, j3), ca in self._terms.items():
                for (b1, bl, b3, m1, m2, m3), cb in other._terms.items():
                    key = (a1 + b1, al + bl, a3 + b3, j1 + m1, j2 + m2, j3 + m3)
                    c = ca * cb
                    if key in out:
                        s = out[key] + c
                        if s.is_zero():
                            del out[key]
                        else:
                            out[key] = s
                    else:
                        out[key] = c
            res = PhasePoly.__new__(PhasePoly)
            res._terms = out
            return res
        return self.scale(other)

    __rmul__ = __mul__

    def scale(self, c) -> "PhasePoly":
        coeff = c if isinstance(c, RationalComplex) else RationalComplex(c)
        if coeff.is_zero():
            return PhasePoly.zero()
        res = PhasePoly.__new__(PhasePoly)
        res._terms = {k: v * coeff for k, v in self._terms.items()}
        return res

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhasePoly):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    # -- calculus ----------------------------------------------------------

    def partial(self, var: str) -> "PhasePoly":
        """Exact partial derivative with respect to one of q1..q3, p1..p3."""
        if var not in VARIABLES:
            raise ValueError(f"unknown variable {var!r}")
        out: dict[Key, RationalComplex] = {}
        if var.startswith("q"):
            slot = 3 + int(var[1]) - 1  # k1,k2,k3 sit at indices 3,4,5
            for key, coeff in self._terms.items():
                k = key[slot]
                if k == 0:
                    continue
                c = coeff * _I * k
                out[key] = out.get(key, RationalComplex()) + c
        else:
            slot = int(var[1]) - 1  # n1, l, n3 at indices 0,1,2
            for key, coeff in self._terms.items():
                e = key[slot]
                if e == 0:
                    continue
                newkey = list(key)
                newkey[slot] = e - 1
                newkey = tuple(newkey)
                c = coeff * e
                acc = out.get(newkey)
                out[newkey] = c if acc is None else acc + c
        return PhasePoly({k: v for k, v in out.items() if not v.is_zero()})

    def q2_average(self) -> "PhasePoly":
        """Keep exactly the k2 = 0 terms (average over the middle angle)."""
        res = PhasePoly.__new__(PhasePoly)
        res._terms = {k: c for k, c in self._terms.items() if k[4] == 0}
        return res

    def oscillatory_part(self) -> "PhasePoly":
        """The k2 != 0 content, i.e. self - q2_average(self)."""
        res = PhasePoly.__new__(PhasePoly)
        res._terms = {k: c for k, c in self._terms.items() if k[4] != 0}
        return res

    def lplus_inverse(self) -> "PhasePoly":
        """Right inverse of the fast transport p2 * d/dq2.

        Per Fourier mode the coefficient is divided by (i k2) and the p2
        exponent is decremented; the zero-mean integration constant is
        automatic in the exponential basis.  Requires all terms to carry
        k2 != 0.
        """
        out: dict[Key, RationalComplex] = {}
        for (n1, l, n3, k1, k2, k3), coeff in self._terms.items():
            if k2 == 0:
                raise NonZeroMean(
                    f"term with k2 = 0 (wave {(k1, k2, k3)}) has no transport preimage"
                )
            out[(n1, l - 1, n3, k1, k2, k3)] = coeff / (_I * k2)
        res = PhasePoly.__new__(PhasePoly)
        res._terms = out
        return res

    def q_transform(self) -> "PhasePoly":
        """Remove the oscillatory part at one order: Q f = (L+)^{-1}(f - <f>)."""
        return self.oscillatory_part().lplus_inverse()

    # -- evaluation --------------------------------------------------------

    def evaluate(self, q, p, prefactor: float = 1.0) -> float:
        """Floating-point value at a single state; returns the real part.

        The imaginary part cancels identically for Hermitian-symmetric
        polynomials; it is not checked here.
        """
        q1, q2, q3 = (float(v) for v in q)
        p1, p2, p3 = (float(v) for v in p)
        total = 0.0 + 0.0j
        for (n1, l, n3, k1, k2, k3), coeff in self._terms.items():
            if l < 0 and p2 == 0.0:
                raise PoleAtZero("negative power of p2 evaluated at p2 = 0")
            mono = (p1 ** n1) * (p2 ** l) * (p3 ** n3)
            phase = np.exp(1j * (k1 * q1 + k2 * q2 + k3 * q3))
            total += complex(coeff) * mono * phase
        return prefactor * total.real

    def compile(self):
        """Return a vectorized evaluator f(q, p) -> real array.

        ``q`` and ``p`` are arrays of shape (..., 3).  Much faster than
        :meth:`evaluate` for batch use (Lyapunov scans, quadratures).
        """
        n = len(self._terms)
        if n == 0:
            return lambda q, p: np.zeros(np.shape(np.asarray(q))[:-1])
        exps = np.empty((n, 3), dtype=np.int64)
        waves = np.empty((n, 3), dtype=np.int64)
        coeffs = np.empty(n, dtype=np.complex128)
        for i, ((n1, l, n3, k1, k2, k3), c) in enumerate(self._terms.items()):
            exps[i] = (n1, l, n3)
            waves[i] = (k1, k2, k3)
            coeffs[i] = complex(c)
        has_neg = bool((exps[:, 1] < 0).any())

        def _eval(q, p):
            q = np.asarray(q, dtype=float)
            p = np.asarray(p, dtype=float)
            if has_neg and np.any(p[..., 1] == 0.0):
                raise PoleAtZero("negative power of p2 evaluated at p2 = 0")
            mono = (
                p[..., 0:1] ** exps[:, 0]
                * p[..., 1:2] ** exps[:, 1].astype(float)
                * p[..., 2:3] ** exps[:, 2]
            )
            phase = np.exp(1j * (q @ waves.T.astype(float)))
            return np.real(mono * phase @ coeffs)

        return _eval

    # -- serialization -----------------------------------------------------

    def to_json_obj(self) -> list[dict]:
        """Stable JSON form: one record per term with exact rationals."""
        out = []
        for (n1, l, n3, k1, k2, k3), c in sorted(self._terms.items()):
            out.append(
                {
                    "n1": n1,
                    "l": l,
                    "n3": n3,
                    "k1": k1,
                    "k2": k2,
                    "k3": k3,
                    "re_num": c.re.numerator,
                    "re_den": c.re.denominator,
                    "im_num": c.im.numerator,
                    "im_den": c.im.denominator,
                }
            )
        return out

    @classmethod
    def from_json_obj(cls, obj: Iterable[Mapping]) -> "PhasePoly":
        terms: dict[Key, RationalComplex] = {}
        for rec in obj:
            key = (rec["n1"], rec["l"], rec["n3"], rec["k1"], rec["k2"], rec["k3"])
            coeff = RationalComplex(
                Fraction(rec["re_num"], rec["re_den"]),
                Fraction(rec["im_num"], rec["im_den"]),
            )
            terms[key] = terms.get(key, RationalComplex()) + coeff
        return cls(terms)

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())

    # -- display -----------------------------------------------------------

    def __repr__(self):
        if not self._terms:
            return "PhasePoly(0)"
        bits = []
        for (n1, l, n3, k1, k2, k3), c in sorted(self._terms.items()):
            mono = []
            if n1:
                mono.append(f"p1^{n1}" if n1 != 1 else "p1")
            if l:
                mono.append(f"p2^{l}" if l != 1 else "p2")
            if n3:
                mono.append(f"p3^{n3}" if n3 != 1 else "p3")
            if k1 or k2 or k3:
                mono.append(f"e^(i({k1}q1+{k2}q2+{k3}q3))")
            coeff = f"({c.re}{'+' if c.im >= 0 else ''}{c.im}i)"
            bits.append(coeff + ("*" + "*".join(mono) if mono else ""))
        return "PhasePoly(" + " + ".join(bits) + ")"
