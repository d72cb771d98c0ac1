"""Mass-action rates, their Jacobians, and the vector field x -> Gamma v(x)."""

from __future__ import annotations

import numpy as np

from .model import Network


def monomials(x: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    """Vector of generalised monomials ``x^A`` (one per row of ``exponents``).

    Zero exponents contribute 1 even where ``x`` is 0, and an exponent matrix
    with no columns yields a vector of ones.
    """
    exponents = np.asarray(exponents)
    if exponents.shape[1] == 0:
        return np.ones(exponents.shape[0])
    return np.prod(np.power(x[None, :], exponents, where=exponents != 0,
                            out=np.ones(exponents.shape, dtype=float)), axis=1)


def _require_positive(x: np.ndarray) -> None:
    if np.any(x <= 0):
        bad = np.flatnonzero(x <= 0)
        raise ValueError(f"concentrations must be strictly positive; offending indices {bad.tolist()}")


class MassActionSystem:
    """Network compiled to dense arrays for repeated evaluation.

    The public module functions validate positivity; the methods here do not,
    so that the integrator can evaluate on the boundary of the orthant.
    """

    def __init__(self, net: Network):
        self.network = net
        self.n = net.n_species
        self.gamma = net.stoichiometric_matrix().astype(float)
        self.fwd_exp = net.reactant_matrix().T.copy()   # r0 x n, integer
        self.bwd_exp = net.product_matrix().T.copy()
        self.kf = np.array([r.k_forward for r in net.reactions], dtype=float)
        self.kb = np.array([r.k_backward if r.reversible else 0.0 for r in net.reactions], dtype=float)
        self.reversible = np.array([r.reversible for r in net.reactions], dtype=bool)
        self._cols = np.arange(self.n)
        self._pmax = int(max(self.fwd_exp.max(initial=0), self.bwd_exp.max(initial=0)))
        self._has_rev = bool(self.reversible.any())

    def _powers(self, x, exps):
        """Entries ``x_i ** A_ri`` gathered from a table of integer powers of x."""
        table = np.empty((self._pmax + 1, self.n))
        table[0] = 1.0
        for p in range(1, self._pmax + 1):
            table[p] = table[p - 1] * x
        return table[exps, self._cols]

    def _mono(self, x, exps):
        if exps.shape[0] == 0:
            return np.zeros(0)
        return self._powers(x, exps).prod(axis=1)

    def rates(self, x: np.ndarray) -> np.ndarray:
        v = self.kf * self._mono(x, self.fwd_exp)
        if self._has_rev:
            v = v - self.kb * self._mono(x, self.bwd_exp)
        return v

    def field(self, x: np.ndarray) -> np.ndarray:
        if self.gamma.shape[1] == 0:
            return np.zeros(self.n)
        return self.gamma @ self.rates(x)

    def _mono_jac(self, x, exps, k):
        """Jacobian of ``k * x^A``: ``diag(w) A diag(1/x)`` on the open orthant,
        term-wise power rule where some coordinate is zero."""
        if exps.shape[0] == 0:
            return np.zeros((0, self.n))
        if np.all(x > 0):
            w = k * self._mono(x, exps)
            return (w[:, None] * exps) / x[None, :]
        vals = self._powers(x, exps)
        deriv = exps * self._powers(x, np.maximum(exps - 1, 0))
        r, n = exps.shape
        cube = np.broadcast_to(vals[:, None, :], (r, n, n)).copy()
        diag = np.arange(n)
        cube[:, diag, diag] = deriv
        return k[:, None] * cube.prod(axis=2)

    def rate_jacobian(self, x: np.ndarray) -> np.ndarray:
        jac = self._mono_jac(x, self.fwd_exp, self.kf)
        if self._has_rev:
            jac = jac - self._mono_jac(x, self.bwd_exp, self.kb)
        return jac

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        if self.gamma.shape[1] == 0:
            return np.zeros((self.n, self.n))
        return self.gamma @ self.rate_jacobian(x)


def _monomial_src(coeffs: np.ndarray, skip: int = -1) -> list[str]:
    """Factors of a monomial as source fragments, optionally differentiated
    with respect to coordinate ``skip`` (the caller supplies the multiplier)."""
    parts = []
    for i, e in enumerate(coeffs):
        e = int(e)
        if i == skip:
            e -= 1
        if e == 1:
            parts.append(f"x{i}")
        elif e > 1:
            parts.append("*".join([f"x{i}"] * e))
    return parts


def compile_system(net: Network):
    """Generate scalar Python code for the field and its Jacobian.

    Returns ``(field, jacobian)`` taking and returning numpy arrays. Small
    networks evaluate several times faster this way than through vectorised
    numpy calls, which matters inside the integrator's inner loop. Works on
    the closed orthant (no division by concentrations).
    """
    n, r0 = net.n_species, net.n_reactions
    gamma = net.stoichiometric_matrix()
    fwd, bwd = net.reactant_matrix(), net.product_matrix()
    kf = [r.k_forward for r in net.reactions]
    kb = [r.k_backward if r.reversible else 0.0 for r in net.reactions]
    rev = [r.reversible for r in net.reactions]
    unpack = f"    {', '.join(f'x{i}' for i in range(n))}{',' if n == 1 else ''} = x.tolist()\n" if n else ""

    def term(k, factors):
        return "*".join([repr(float(k))] + factors)

    lines = ["def field(x):\n", unpack]
    for j in range(r0):
        expr = term(kf[j], _monomial_src(fwd[:, j]))
        if rev[j]:
            expr += " - " + term(kb[j], _monomial_src(bwd[:, j]))
        lines.append(f"    v{j} = {expr}\n")
    comps = []
    for i in range(n):
        terms = [f"{int(g)}*v{j}" if g not in (1, -1) else ("" if g == 1 else "-") + f"v{j}"
                 for j, g in enumerate(gamma[i]) if g != 0]
        comps.append(" + ".join(terms) if terms else "0.0")
    lines.append(f"    return _array([{', '.join(comps)}], dtype=_float)\n")

    jl = ["def jacobian(x):\n", unpack]
    for j in range(r0):
        for l in range(n):
            pieces = []
            if fwd[l, j]:
                pieces.append(term(kf[j] * int(fwd[l, j]), _monomial_src(fwd[:, j], l)))
            if rev[j] and bwd[l, j]:
                pieces.append("-" + term(kb[j] * int(bwd[l, j]), _monomial_src(bwd[:, j], l)))
            if pieces:
                jl.append(f"    d{j}_{l} = {' '.join(pieces) if len(pieces) == 1 else pieces[0] + ' ' + pieces[1]}\n")
    rows = []
    for i in range(n):
        row = []
        for l in range(n):
            terms = []
            for j in range(r0):
                g = int(gamma[i, j])
                if g and (fwd[l, j] or (rev[j] and bwd[l, j])):
                    terms.append(f"{g}*d{j}_{l}")
            row.append(" + ".join(terms) if terms else "0.0")
        rows.append("[" + ", ".join(row) + "]")
    jl.append(f"    return _array([{', '.join(rows)}], dtype=_float).reshape({n}, {n})\n")

    namespace = {"_array": np.array, "_float": float}
    exec("".join(lines), namespace)
    exec("".join(jl), namespace)
    return namespace["field"], namespace["jacobian"]


def _state(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (net.n_species,):
        raise ValueError(f"state has shape {x.shape}, expected ({net.n_species},)")
    _require_positive(x)
    return x


def rate_vector(net: Network, x) -> np.ndarray:
    """Net mass-action rates; reversible entries are forward minus backward."""
    return MassActionSystem(net).rates(_state(net, x))


def rate_jacobian(net: Network, x) -> np.ndarray:
    """Exact r0 x n derivative of :func:`rate_vector`."""
    return MassActionSystem(net).rate_jacobian(_state(net, x))


def vector_field(net: Network, x) -> np.ndarray:
    return MassActionSystem(net).field(_state(net, x))


def field_jacobian(net: Network, x) -> np.ndarray:
    return MassActionSystem(net).jacobian(_state(net, x))
