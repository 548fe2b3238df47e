"""Sparse multivariate polynomial algebra with a fixed graded-lex monomial order.

A polynomial in ``d`` variables is stored as a map from exponent tuples to
float coefficients; zero coefficients are never stored.  The monomial order is
graded lexicographic (grade first, then lex with x1 before x2), fixed once and
shared with the generator-matrix machinery so that coordinate vectors are
reproducible across runs.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

# Exponent tuple: entry i is the power of variable x_{i+1}.
MultiIndex = tuple[int, ...]

# Refuse to enumerate bases beyond this size; anything larger is a mistake.
MAX_BASIS_SIZE = 20_000_000


def grlex_key(exponents: MultiIndex) -> tuple:
    """Sort key realizing graded-lex order: by total degree, then x1 before x2."""
    return (sum(exponents), tuple(-e for e in exponents))


def enumerate_basis(dim: int, degree: int) -> list[MultiIndex]:
    """All exponent tuples of total degree <= degree, in graded-lex order.

    The result has length C(dim + degree, degree).
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    count = math.comb(dim + degree, degree)
    if count > MAX_BASIS_SIZE:
        raise ValueError(f"basis of size {count} exceeds limit {MAX_BASIS_SIZE}")

    out: list[MultiIndex] = []

    def _compositions(total: int, slots: int, prefix: tuple[int, ...]) -> None:
        if slots == 1:
            out.append(prefix + (total,))
            return
        for head in range(total, -1, -1):
            _compositions(total - head, slots - 1, prefix + (head,))

    for total in range(degree + 1):
        _compositions(total, dim, ())
    out.sort(key=grlex_key)
    return out


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial on R^dim held as a sparse {exponents: coefficient} map.

    Instances are immutable; all operations return new polynomials.  Stored
    coefficients are always nonzero (exact-zero pruning only, so degrees never
    change silently).
    """

    dim: int
    terms: Mapping[MultiIndex, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        clean = {}
        for mono, coeff in self.terms.items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != self.dim:
                raise ValueError(f"exponent tuple {mono} does not match dim {self.dim}")
            if any(e < 0 for e in mono):
                raise ValueError(f"negative exponent in {mono}")
            c = float(coeff)
            if c != 0.0:
                clean[mono] = clean.get(mono, 0.0) + c
        object.__setattr__(self, "terms", {m: c for m, c in clean.items() if c != 0.0})

    # -- constructors -------------------------------------------------------

    @staticmethod
    def zero(dim: int) -> "Polynomial":
        return Polynomial(dim, {})

    @staticmethod
    def constant(dim: int, value: float) -> "Polynomial":
        return Polynomial(dim, {(0,) * dim: float(value)})

    @staticmethod
    def variable(dim: int, index: int) -> "Polynomial":
        """The coordinate polynomial x_{index+1} (0-based index)."""
        if not 0 <= index < dim:
            raise ValueError(f"variable index {index} out of range for dim {dim}")
        expo = [0] * dim
        expo[index] = 1
        return Polynomial(dim, {tuple(expo): 1.0})

    @staticmethod
    def monomial(dim: int, exponents: Sequence[int], coeff: float = 1.0) -> "Polynomial":
        return Polynomial(dim, {tuple(exponents): coeff})

    @staticmethod
    def affine(dim: int, const: float, slopes: Sequence[float]) -> "Polynomial":
        """const + sum_i slopes[i] * x_{i+1}."""
        if len(slopes) != dim:
            raise ValueError("need one slope per variable")
        terms: dict[MultiIndex, float] = {(0,) * dim: float(const)}
        for i, s in enumerate(slopes):
            if s != 0.0:
                expo = [0] * dim
                expo[i] = 1
                terms[tuple(expo)] = float(s)
        return Polynomial(dim, terms)

    # -- basic queries -------------------------------------------------------

    def degree(self) -> int:
        """Max total degree over stored terms; the zero polynomial has degree 0."""
        if not self.terms:
            return 0
        return max(sum(m) for m in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def depends_on(self, index: int) -> bool:
        return any(m[index] > 0 for m in self.terms)

    def coefficient(self, exponents: Sequence[int]) -> float:
        return self.terms.get(tuple(exponents), 0.0)

    def coordinate_vector(self, basis: Sequence[MultiIndex]) -> np.ndarray:
        """Coefficients in the given ordered basis; raises on missing monomials."""
        index = {m: i for i, m in enumerate(basis)}
        vec = np.zeros(len(basis))
        for mono, coeff in self.terms.items():
            if mono not in index:
                raise ValueError(f"monomial {mono} outside the provided basis")
            vec[index[mono]] = coeff
        return vec

    # -- arithmetic ----------------------------------------------------------

    def _check_dim(self, other: "Polynomial") -> None:
        if self.dim != other.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other: "Polynomial | float") -> "Polynomial":
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.dim, other)
        self._check_dim(other)
        terms = dict(self.terms)
        for mono, coeff in other.terms.items():
            terms[mono] = terms.get(mono, 0.0) + coeff
        return Polynomial(self.dim, terms)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.dim, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other: "Polynomial | float") -> "Polynomial":
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.dim, other)
        return self + (-other)

    def __rsub__(self, other: float) -> "Polynomial":
        return Polynomial.constant(self.dim, other) + (-self)

    def __mul__(self, other: "Polynomial | float") -> "Polynomial":
        if not isinstance(other, Polynomial):
            return Polynomial(self.dim, {m: c * float(other) for m, c in self.terms.items()})
        self._check_dim(other)
        terms: dict[MultiIndex, float] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                mono = tuple(a + b for a, b in zip(ma, mb))
                terms[mono] = terms.get(mono, 0.0) + ca * cb
        return Polynomial(self.dim, terms)

    __rmul__ = __mul__

    # -- calculus ------------------------------------------------------------

    def partial(self, index: int) -> "Polynomial":
        """Partial derivative with respect to x_{index+1}."""
        terms: dict[MultiIndex, float] = {}
        for mono, coeff in self.terms.items():
            e = mono[index]
            if e == 0:
                continue
            lowered = list(mono)
            lowered[index] = e - 1
            key = tuple(lowered)
            terms[key] = terms.get(key, 0.0) + coeff * e
        return Polynomial(self.dim, terms)

    def gradient(self) -> list["Polynomial"]:
        return [self.partial(i) for i in range(self.dim)]

    # -- evaluation ----------------------------------------------------------

    def __call__(self, z: Sequence[float] | np.ndarray) -> float | np.ndarray:
        """Evaluate at a point or an array of points with shape (..., dim).

        A 1-D input of length dim is a single point; otherwise the last axis
        must have length dim and evaluation broadcasts over leading axes.
        """
        z = np.asarray(z, dtype=float)
        if z.shape == () and self.dim == 1:
            z = z.reshape(1)
        if z.shape[-1] != self.dim:
            raise ValueError(f"point dimension {z.shape[-1]} does not match dim {self.dim}")
        single = z.ndim == 1
        if not self.terms:
            return 0.0 if single else np.zeros(z.shape[:-1])
        acc = np.zeros(z.shape[:-1])
        for mono, coeff in self.terms.items():
            term = np.full(z.shape[:-1], coeff)
            for i, e in enumerate(mono):
                if e == 1:
                    term = term * z[..., i]
                elif e > 1:
                    term = term * z[..., i] ** e
            acc = acc + term
        return float(acc) if single else acc

    # -- text form -----------------------------------------------------------

    def __str__(self) -> str:
        return format_polynomial(self)

    def __repr__(self) -> str:
        return f"Polynomial(dim={self.dim}, '{format_polynomial(self)}')"


def gradient(poly: Polynomial) -> list[Polynomial]:
    """Gradient as a list of d polynomials; all-zero for constants."""
    return poly.gradient()


def multiply(a: Polynomial, b: Polynomial) -> Polynomial:
    return a * b


def eval_poly(poly: Polynomial, z: Sequence[float] | np.ndarray) -> float | np.ndarray:
    return poly(z)


def prod(polys: Iterable[Polynomial]) -> Polynomial:
    result: Polynomial | None = None
    for p in polys:
        result = p if result is None else result * p
    if result is None:
        raise ValueError("empty product")
    return result


# ---------------------------------------------------------------------------
# Text form: terms `coeff * x1^e1 x2^e2` joined by `+` (or `-`), e.g.
#   "0.01 + 0.006 * x1"  or  "1 - 1 * x1^2".
# ---------------------------------------------------------------------------

_FACTOR_RE = re.compile(r"^x(\d+)(?:\^(\d+))?$")
_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


class PolynomialParseError(ValueError):
    """Raised on malformed polynomial text; carries the offending token."""

    def __init__(self, message: str, token: str = ""):
        super().__init__(message)
        self.token = token


def parse_polynomial(text: str, dim: int) -> Polynomial:
    """Parse the text form into a polynomial in `dim` variables.

    Terms are separated by top-level `+`/`-`; each term is an optional numeric
    coefficient and variable factors like `x1^2` or `x3`, joined by `*` or
    whitespace.
    """
    src = text.strip()
    if not src:
        raise PolynomialParseError("empty polynomial text", text)
    # Normalize term separators, keeping exponent signs intact: e-5 etc. have
    # no spaces, so splitting on +/- that follow a space or start is safe.
    chunks: list[str] = []
    sign = 1.0
    buf = []
    i = 0
    while i < len(src):
        ch = src[i]
        if ch in "+-" and (not buf or buf[-1].isspace()):
            if "".join(buf).strip():
                chunks.append(("".join(buf), sign))
                buf = []
                sign = 1.0
            if ch == "-":
                sign = -sign
            i += 1
            continue
        buf.append(ch)
        i += 1
    if "".join(buf).strip():
        chunks.append(("".join(buf), sign))
    if not chunks:
        raise PolynomialParseError("no terms found", text)

    terms: dict[MultiIndex, float] = {}
    for chunk, sgn in chunks:
        factors = [f for f in re.split(r"[*\s]+", chunk.strip()) if f]
        coeff = sgn
        expo = [0] * dim
        saw_number = False
        for f in factors:
            m = _FACTOR_RE.match(f)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= dim:
                    raise PolynomialParseError(
                        f"variable x{idx} out of range for dim {dim}", f)
                expo[idx - 1] += int(m.group(2) or 1)
            elif _NUMBER_RE.match(f):
                if saw_number:
                    raise PolynomialParseError(f"two numeric factors in term '{chunk}'", f)
                coeff *= float(f)
                saw_number = True
            else:
                raise PolynomialParseError(f"unrecognized token '{f}'", f)
        key = tuple(expo)
        terms[key] = terms.get(key, 0.0) + coeff
    return Polynomial(dim, terms)


def format_polynomial(poly: Polynomial) -> str:
    """Render in the text form accepted by parse_polynomial (full precision)."""
    if not poly.terms:
        return "0"
    pieces = []
    for mono in sorted(poly.terms, key=grlex_key):
        coeff = poly.terms[mono]
        factors = [repr(coeff)]
        for i, e in enumerate(mono):
            if e == 1:
                factors.append(f"x{i + 1}")
            elif e > 1:
                factors.append(f"x{i + 1}^{e}")
        pieces.append(" * ".join(factors))
    return " + ".join(pieces)
