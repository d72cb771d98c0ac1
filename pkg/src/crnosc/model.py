"""Species, complexes, reactions and networks, plus the plain-text reaction format.

One reaction per line::

    species: X, Y, Z            # optional, fixes the species order
    X + Z -> 2 Y ; k = 4
    0 <-> X ; kf = 0.2, kr = 2

Species are ordered by first appearance unless a ``species:`` line comes
before the first reaction; species not listed there are appended in order of
first appearance.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

SPECIES_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


class NetworkParseError(ValueError):
    """Raised for malformed network text. Carries 1-based line and column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


@dataclass(frozen=True)
class SpeciesId:
    name: str
    index: int


@dataclass(frozen=True, eq=False)
class Complex:
    """Formal nonnegative integer combination of species; ``Complex(())`` is "0".

    ``terms`` keeps the written order so that serialization is stable;
    equality ignores the order.
    """

    terms: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        seen = set()
        for name, coeff in self.terms:
            if name in seen:
                raise ValueError(f"species {name!r} repeated in complex")
            if int(coeff) != coeff or coeff < 1:
                raise ValueError(f"coefficient of {name!r} must be a positive integer, got {coeff!r}")
            seen.add(name)

    @classmethod
    def from_dict(cls, coefficients: Mapping[str, int]) -> "Complex":
        return cls(tuple((s, int(c)) for s, c in coefficients.items() if c != 0))

    def as_dict(self) -> dict[str, int]:
        return dict(self.terms)

    @property
    def species(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.terms)

    def vector(self, species: Sequence[str]) -> np.ndarray:
        index = {s: i for i, s in enumerate(species)}
        out = np.zeros(len(species), dtype=np.int64)
        for name, coeff in self.terms:
            out[index[name]] = coeff
        return out

    def __eq__(self, other):
        if not isinstance(other, Complex):
            return NotImplemented
        return self.as_dict() == other.as_dict()

    def __hash__(self):
        return hash(frozenset(self.terms))

    def __str__(self):
        if not self.terms:
            return "0"
        return " + ".join(name if c == 1 else f"{c} {name}" for name, c in self.terms)


@dataclass(frozen=True)
class Reaction:
    reactant: Complex
    product: Complex
    k_forward: float
    reversible: bool = False
    k_backward: Optional[float] = None

    def __post_init__(self):
        if not (self.k_forward > 0 and math.isfinite(self.k_forward)):
            raise ValueError(f"forward rate constant must be positive and finite, got {self.k_forward!r}")
        if self.reversible:
            if self.k_backward is None or not (self.k_backward > 0 and math.isfinite(self.k_backward)):
                raise ValueError(f"backward rate constant must be positive and finite, got {self.k_backward!r}")
        elif self.k_backward is not None:
            raise ValueError("irreversible reaction cannot carry a backward rate constant")
        if self.reactant == self.product:
            raise ValueError(f"reactant equals product in {self.reactant} -> {self.product}")

    def __str__(self):
        if self.reversible:
            return f"{self.reactant} <-> {self.product} ; kf = {_fmt(self.k_forward)}, kr = {_fmt(self.k_backward)}"
        return f"{self.reactant} -> {self.product} ; k = {_fmt(self.k_forward)}"


@dataclass(frozen=True)
class Network:
    species: tuple[str, ...] = ()
    reactions: tuple[Reaction, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        if len(set(self.species)) != len(self.species):
            raise ValueError("duplicate species names")
        for name in self.species:
            if not SPECIES_RE.fullmatch(name):
                raise ValueError(f"invalid species name {name!r}")
        index = {s: i for i, s in enumerate(self.species)}
        for rxn in self.reactions:
            for name in rxn.reactant.species + rxn.product.species:
                if name not in index:
                    raise ValueError(f"reaction {rxn} uses undeclared species {name!r}")
        object.__setattr__(self, "_index", index)

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    def species_id(self, name: str) -> SpeciesId:
        return SpeciesId(name, self._index[name])

    def index_of(self, name: str) -> int:
        return self._index[name]

    def reactant_matrix(self) -> np.ndarray:
        """n x r0 matrix of reactant coefficients (columns are reactions)."""
        return self._complex_matrix(r.reactant for r in self.reactions)

    def product_matrix(self) -> np.ndarray:
        return self._complex_matrix(r.product for r in self.reactions)

    def _complex_matrix(self, complexes: Iterable[Complex]) -> np.ndarray:
        cols = [c.vector(self.species) for c in complexes]
        if not cols:
            return np.zeros((self.n_species, 0), dtype=np.int64)
        return np.column_stack(cols)

    def stoichiometric_matrix(self) -> np.ndarray:
        return stoichiometric_matrix(self)

    def with_rates(self, k_forward: Sequence[float], k_backward: Optional[Sequence[Optional[float]]] = None) -> "Network":
        """Copy of the network with replaced rate constants."""
        if len(k_forward) != self.n_reactions:
            raise ValueError("need one forward constant per reaction")
        out = []
        for j, rxn in enumerate(self.reactions):
            kb = None
            if rxn.reversible:
                kb = rxn.k_backward if k_backward is None or k_backward[j] is None else k_backward[j]
            out.append(Reaction(rxn.reactant, rxn.product, float(k_forward[j]), rxn.reversible,
                                None if kb is None else float(kb)))
        return Network(self.species, out)


def stoichiometric_matrix(net: Network) -> np.ndarray:
    """Integer n x r0 matrix; column j is product minus reactant of reaction j.

    Reversible reactions contribute a single column in forward orientation.
    """
    return net.product_matrix() - net.reactant_matrix()


def _fmt(x: float) -> str:
    return repr(float(x)).removesuffix(".0") if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<arrow><->|->)|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[+;,=*^/:-]))"
)


class _Lexer:
    def __init__(self, text: str, lineno: int):
        self.text = text
        self.lineno = lineno
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN_RE.match(text, pos)
            if not m or m.end() == pos:
                col = pos + len(text[pos:]) - len(text[pos:].lstrip()) + 1
                raise NetworkParseError(f"unexpected character {text[col - 1]!r}", lineno, col)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start + 1))
            pos = m.end()
        self.i = 0
        self.end_col = len(text.rstrip()) + 1

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("eol", "", self.end_col)

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, kind: str, value: Optional[str] = None):
        tok = self.next()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value if value is not None else kind
            got = tok[1] or "end of line"
            raise NetworkParseError(f"expected {want!r}, found {got!r}", self.lineno, tok[2])
        return tok

    def error(self, msg: str):
        raise NetworkParseError(msg, self.lineno, self.peek()[2])


def _parse_complex(lex: _Lexer) -> Complex:
    kind, val, col = lex.peek()
    if kind == "num" and val == "0":
        lex.next()
        return Complex(())
    terms: list[tuple[str, int]] = []
    seen: set[str] = set()
    while True:
        kind, val, col = lex.peek()
        coeff = 1
        if kind == "num":
            if not re.fullmatch(r"\d+", val):
                lex.error(f"stoichiometric coefficient must be an integer, found {val!r}")
            coeff = int(val)
            lex.next()
            if coeff == 0:
                raise NetworkParseError("zero coefficient not allowed in a term", lex.lineno, col)
        kind, name, ncol = lex.expect("name")
        if name in seen:
            raise NetworkParseError(f"species {name!r} appears twice on one side", lex.lineno, ncol)
        seen.add(name)
        terms.append((name, coeff))
        if lex.peek()[0:2] == ("op", "+"):
            lex.next()
            continue
        return Complex(tuple(terms))


def _parse_value(lex: _Lexer, symbols: Optional[Mapping[str, float]]) -> float:
    """A decimal number, or (when ``symbols`` given) a product of factors
    ``NUMBER | NAME | NAME ^ INT``, e.g. ``eps^-1 * eta^-2``."""
    value = 1.0
    while True:
        kind, val, col = lex.peek()
        if kind == "num":
            lex.next()
            factor = float(val)
        elif kind == "name" and symbols is not None:
            lex.next()
            if val not in symbols:
                raise NetworkParseError(f"unknown symbol {val!r}", lex.lineno, col)
            factor = float(symbols[val])
            if lex.peek()[0:2] == ("op", "^"):
                lex.next()
                sign = 1
                if lex.peek()[0:2] == ("op", "-"):
                    lex.next()
                    sign = -1
                _, ev, ecol = lex.expect("num")
                if not re.fullmatch(r"\d+", ev):
                    raise NetworkParseError("exponent must be an integer", lex.lineno, ecol)
                factor = factor ** (sign * int(ev))
        elif kind == "op" and val == "-":
            raise NetworkParseError("rate constant must be positive", lex.lineno, col)
        else:
            raise NetworkParseError(f"expected a number, found {val or 'end of line'!r}", lex.lineno, col)
        value *= factor
        if symbols is not None and lex.peek()[0:2] == ("op", "*"):
            lex.next()
            continue
        return value


def _parse_rates(lex: _Lexer, names: Sequence[str], symbols) -> list[tuple[float, int]]:
    out = []
    for i, name in enumerate(names):
        if i:
            lex.expect("op", ",")
        lex.expect("name", name)
        lex.expect("op", "=")
        col = lex.peek()[2]
        out.append((_parse_value(lex, symbols), col))
    return out


def parse_network(text: str, *, symbols: Optional[Mapping[str, float]] = None,
                  require_rates: bool = True) -> Network:
    """Parse the line-oriented reaction format into a :class:`Network`.

    ``symbols`` enables symbolic rate expressions such as ``eps^-1 * eta^-2``
    (used only for files of added reactions). With ``require_rates=False`` the
    ``; rates`` part may be omitted, in which case every constant is 1.
    """
    declared: list[str] = []
    order: list[str] = []
    reactions: list[Reaction] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        m = re.match(r"\s*species\s*:", line)
        if m:
            if reactions:
                raise NetworkParseError("species declaration must precede reactions", lineno, m.start() + 1)
            for tok in line[m.end():].split(","):
                name = tok.strip()
                if not name:
                    continue
                if not SPECIES_RE.fullmatch(name):
                    raise NetworkParseError(f"invalid species name {name!r}", lineno, line.index(name) + 1)
                if name in declared:
                    raise NetworkParseError(f"species {name!r} declared twice", lineno, line.index(name) + 1)
                declared.append(name)
            continue

        lex = _Lexer(line, lineno)
        start_col = lex.peek()[2]
        reactant = _parse_complex(lex)
        _, arrow, _ = lex.expect("arrow")
        product = _parse_complex(lex)
        reversible = arrow == "<->"
        if reactant == product:
            raise NetworkParseError("reactant and product complexes are identical", lineno, start_col)

        if lex.peek()[0] == "eol" and not require_rates:
            kf, kb = 1.0, (1.0 if reversible else None)
        else:
            lex.expect("op", ";")
            if reversible:
                (kf, cf), (kb, cb) = _parse_rates(lex, ["kf", "kr"], symbols)
            else:
                ((kf, cf),) = _parse_rates(lex, ["k"], symbols)
                kb, cb = None, cf
            for value, col in ((kf, cf), (kb, cb)):
                if value is not None and not (value > 0 and math.isfinite(value)):
                    raise NetworkParseError(f"rate constant must be positive and finite, got {value!r}", lineno, col)
        tok = lex.peek()
        if tok[0] != "eol":
            raise NetworkParseError(f"unexpected {tok[1]!r} after reaction", lineno, tok[2])
        for name in reactant.species + product.species:
            if name not in order:
                order.append(name)
        reactions.append(Reaction(reactant, product, kf, reversible, kb))

    species = declared + [s for s in order if s not in declared]
    return Network(tuple(species), tuple(reactions))


def _first_appearance(net: Network) -> list[str]:
    order: list[str] = []
    for rxn in net.reactions:
        for name in rxn.reactant.species + rxn.product.species:
            if name not in order:
                order.append(name)
    return order


def serialize_network(net: Network) -> str:
    """Inverse of :func:`parse_network`; emits a ``species:`` line only when the
    species order is not recoverable from first appearance."""
    lines = []
    if list(net.species) != _first_appearance(net):
        lines.append("species: " + ", ".join(net.species))
    lines.extend(str(r) for r in net.reactions)
    return "\n".join(lines) + "\n"


def read_network(path, **kwargs) -> Network:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read(), **kwargs)
