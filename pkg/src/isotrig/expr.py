"""Immutable symbolic scalar expressions over named variables.

Supports parsing from an infix grammar, exact partial differentiation,
point evaluation, simultaneous substitution, and compilation to fast
scalar / vectorized callables.  Simplification is deliberately limited
to constant folding and annihilator rules (0*a, 1*a, a^0, ...); there
is no polynomial canonicalization.

Nodes are interned, so structurally equal subtrees are the same object
and large derivative chains stay DAG-shaped rather than exploding into
trees.  Everything here is immutable and safe to share across threads.
"""

from __future__ import annotations

import math
import re
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, ExprError, MissingVariableError, ParseError

__all__ = [
    "Expr",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "powi",
    "powr",
    "sin",
    "cos",
    "exp",
    "parse",
    "differentiate",
    "evaluate",
    "substitute",
    "to_string",
    "topo_order",
    "compile_scalar",
    "compile_batch",
    "ZERO",
    "ONE",
]

# Denominators smaller than this abort evaluation: the only quotients the
# toolkit produces are divisions by the homogenizing variable w, which is
# always 1 or a positive ray parameter in valid uses.
DENOMINATOR_FLOOR = 1e-12

_LEAF_KINDS = ("const", "var")
_UNARY_KINDS = ("neg", "sin", "cos", "exp")
_BINARY_KINDS = ("add", "mul", "div", "powi", "powr")


class Expr:
    """One interned node of an expression DAG.

    ``kind`` is one of: const, var, add, mul, div, powi, powr, neg, sin,
    cos, exp.  ``payload`` holds the constant value, variable name, or
    power exponent; ``args`` holds the child expressions.
    """

    __slots__ = ("kind", "args", "payload", "free_vars", "_hash")

    kind: str
    args: tuple["Expr", ...]
    payload: object
    free_vars: frozenset[str]

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        # Children are interned, so tuple comparison short-circuits on identity.
        return (
            self.kind == other.kind
            and self.payload == other.payload
            and self.args == other.args
        )

    def __repr__(self) -> str:
        return f"Expr({to_string(self)!r})"

    def __str__(self) -> str:
        return to_string(self)

    # Operator sugar so vector fields can be assembled programmatically.
    def __add__(self, other) -> "Expr":
        return add(self, as_expr(other))

    def __radd__(self, other) -> "Expr":
        return add(as_expr(other), self)

    def __sub__(self, other) -> "Expr":
        return sub(self, as_expr(other))

    def __rsub__(self, other) -> "Expr":
        return sub(as_expr(other), self)

    def __mul__(self, other) -> "Expr":
        return mul(self, as_expr(other))

    def __rmul__(self, other) -> "Expr":
        return mul(as_expr(other), self)

    def __truediv__(self, other) -> "Expr":
        return div(self, as_expr(other))

    def __rtruediv__(self, other) -> "Expr":
        return div(as_expr(other), self)

    def __pow__(self, other) -> "Expr":
        if isinstance(other, int):
            return powi(self, other) if other >= 0 else div(ONE, powi(self, -other))
        return powr(self, float(other))

    def __neg__(self) -> "Expr":
        return neg(self)


_INTERN: dict[tuple, Expr] = {}
_FV_INTERN: dict[frozenset, frozenset] = {}


def _intern_fv(s: frozenset[str]) -> frozenset[str]:
    return _FV_INTERN.setdefault(s, s)


def _node(kind: str, args: tuple[Expr, ...], payload: object) -> Expr:
    key = (kind, payload, tuple(id(a) for a in args))
    hit = _INTERN.get(key)
    if hit is not None:
        return hit
    node = object.__new__(Expr)
    node.kind = kind
    node.args = args
    node.payload = payload
    if kind == "var":
        fv = frozenset((payload,))
    elif kind == "const":
        fv = frozenset()
    else:
        fv = frozenset().union(*(a.free_vars for a in args))
    node.free_vars = _intern_fv(fv)
    node._hash = hash(key)
    _INTERN[key] = node
    return node


def as_expr(value) -> Expr:
    """Coerce a number (or pass through an Expr) to an expression node."""
    if isinstance(value, Expr):
        return value
    return const(float(value))


def const(value: float) -> Expr:
    value = float(value)
    if not math.isfinite(value):
        raise ExprError(f"non-finite constant {value!r}")
    if value == 0.0:  # canonicalize -0.0
        value = 0.0
    return _node("const", (), value)


def var(name: str) -> Expr:
    return _node("var", (), name)


def _is_const(e: Expr) -> bool:
    return e.kind == "const"


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return const(a.payload + b.payload)
    if _is_const(a) and a.payload == 0.0:
        return b
    if _is_const(b) and b.payload == 0.0:
        return a
    return _node("add", (a, b), None)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return const(-a.payload)
    if a.kind == "neg":
        return a.args[0]
    return _node("neg", (a,), None)


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, neg(b))


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return const(a.payload * b.payload)
    for x, y in ((a, b), (b, a)):
        if _is_const(x):
            if x.payload == 0.0:
                return ZERO
            if x.payload == 1.0:
                return y
    return _node("mul", (a, b), None)


def div(num: Expr, den: Expr) -> Expr:
    if _is_const(den):
        if den.payload == 0.0:
            raise ExprError("division by constant zero")
        if _is_const(num):
            return const(num.payload / den.payload)
        if den.payload == 1.0:
            return num
    if _is_const(num) and num.payload == 0.0:
        return ZERO
    return _node("div", (num, den), None)


def powi(base: Expr, exponent: int) -> Expr:
    exponent = int(exponent)
    if exponent < 0:
        raise ExprError("integer power exponent must be >= 0")
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if _is_const(base):
        return const(base.payload ** exponent)
    return _node("powi", (base,), exponent)


def powr(base: Expr, exponent: float) -> Expr:
    exponent = float(exponent)
    if exponent == int(exponent):
        n = int(exponent)
        return powi(base, n) if n >= 0 else div(ONE, powi(base, -n))
    if _is_const(base):
        if base.payload < 0.0:
            raise ExprError("real power of a negative constant")
        return const(base.payload ** exponent)
    return _node("powr", (base,), exponent)


def _fold_unary(kind: str, fn: Callable[[float], float]) -> Callable[[Expr], Expr]:
    def build(a: Expr) -> Expr:
        if _is_const(a):
            return const(fn(a.payload))
        return _node(kind, (a,), None)

    return build


sin = _fold_unary("sin", math.sin)
cos = _fold_unary("cos", math.cos)
exp = _fold_unary("exp", math.exp)

ZERO = const(0.0)
ONE = const(1.0)


# --------------------------------------------------------------------------
# Traversal
# --------------------------------------------------------------------------

def topo_order(roots: Iterable[Expr]) -> list[Expr]:
    """All nodes reachable from ``roots``, children before parents."""
    order: list[Expr] = []
    seen: set[int] = set()
    stack: list[tuple[Expr, bool]] = [(r, False) for r in roots]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for child in node.args:
            if id(child) not in seen:
                stack.append((child, False))
    return order


# --------------------------------------------------------------------------
# Core operations
# --------------------------------------------------------------------------

def differentiate(f: Expr, name: str) -> Expr:
    """Exact symbolic partial derivative of ``f`` with respect to ``name``."""
    memo: dict[int, Expr] = {}
    for node in topo_order([f]):
        if name not in node.free_vars:
            memo[id(node)] = ZERO
            continue
        kind = node.kind
        if kind == "var":
            d = ONE  # name is in free_vars, so this is the variable itself
        elif kind == "add":
            d = add(memo[id(node.args[0])], memo[id(node.args[1])])
        elif kind == "neg":
            d = neg(memo[id(node.args[0])])
        elif kind == "mul":
            a, b = node.args
            d = add(mul(memo[id(a)], b), mul(a, memo[id(b)]))
        elif kind == "div":
            num, den = node.args
            dn, dd = memo[id(num)], memo[id(den)]
            if dd is ZERO:
                d = div(dn, den)
            else:
                d = div(sub(mul(dn, den), mul(num, dd)), powi(den, 2))
        elif kind == "powi":
            base = node.args[0]
            n = node.payload
            d = mul(mul(const(n), powi(base, n - 1)), memo[id(base)])
        elif kind == "powr":
            base = node.args[0]
            c = node.payload
            d = mul(mul(const(c), powr(base, c - 1.0)), memo[id(base)])
        elif kind == "sin":
            a = node.args[0]
            d = mul(cos(a), memo[id(a)])
        elif kind == "cos":
            a = node.args[0]
            d = neg(mul(sin(a), memo[id(a)]))
        elif kind == "exp":
            a = node.args[0]
            d = mul(node, memo[id(a)])
        else:  # pragma: no cover - unreachable
            raise ExprError(f"cannot differentiate node kind {kind!r}")
        memo[id(node)] = d
    return memo[id(f)]


def evaluate(f: Expr, at: Mapping[str, float]) -> float:
    """IEEE double value of ``f`` under a full variable assignment."""
    memo: dict[int, float] = {}
    for node in topo_order([f]):
        kind = node.kind
        if kind == "const":
            v = node.payload
        elif kind == "var":
            try:
                v = float(at[node.payload])
            except KeyError:
                raise MissingVariableError(
                    f"no value for variable {node.payload!r}"
                ) from None
        elif kind == "add":
            v = memo[id(node.args[0])] + memo[id(node.args[1])]
        elif kind == "mul":
            v = memo[id(node.args[0])] * memo[id(node.args[1])]
        elif kind == "div":
            den = memo[id(node.args[1])]
            if abs(den) < DENOMINATOR_FLOOR:
                raise DomainError(f"denominator {den!r} below {DENOMINATOR_FLOOR}")
            v = memo[id(node.args[0])] / den
        elif kind == "neg":
            v = -memo[id(node.args[0])]
        elif kind == "powi":
            v = memo[id(node.args[0])] ** node.payload
        elif kind == "powr":
            base = memo[id(node.args[0])]
            if base < 0.0 or (base == 0.0 and node.payload < 0.0):
                raise DomainError(f"real power of non-positive base {base!r}")
            v = base ** node.payload
        elif kind == "sin":
            v = math.sin(memo[id(node.args[0])])
        elif kind == "cos":
            v = math.cos(memo[id(node.args[0])])
        elif kind == "exp":
            try:
                v = math.exp(memo[id(node.args[0])])
            except OverflowError:
                raise DomainError("exp overflow") from None
        else:  # pragma: no cover - unreachable
            raise ExprError(f"cannot evaluate node kind {kind!r}")
        memo[id(node)] = v
    return memo[id(f)]


def substitute(f: Expr, bindings: Mapping[str, Expr]) -> Expr:
    """Simultaneous substitution of variables by expressions."""
    if not bindings:
        return f
    touched = frozenset(bindings)
    memo: dict[int, Expr] = {}
    for node in topo_order([f]):
        if not (node.free_vars & touched):
            memo[id(node)] = node
            continue
        if node.kind == "var":
            memo[id(node)] = bindings.get(node.payload, node)
            continue
        new_args = tuple(memo[id(a)] for a in node.args)
        memo[id(node)] = _REBUILD[node.kind](new_args, node.payload)
    return memo[id(f)]


_REBUILD: dict[str, Callable[[tuple[Expr, ...], object], Expr]] = {
    "add": lambda a, p: add(*a),
    "mul": lambda a, p: mul(*a),
    "div": lambda a, p: div(*a),
    "neg": lambda a, p: neg(*a),
    "sin": lambda a, p: sin(*a),
    "cos": lambda a, p: cos(*a),
    "exp": lambda a, p: exp(*a),
    "powi": lambda a, p: powi(a[0], p),
    "powr": lambda a, p: powr(a[0], p),
}


# --------------------------------------------------------------------------
# Printing (same grammar as the parser; reparsing is evaluation-equivalent)
# --------------------------------------------------------------------------

_PREC_ADD = 10
_PREC_NEG = 20
_PREC_MUL = 30
_PREC_POW = 40
_PREC_ATOM = 50


def _render(e: Expr, need: int, out: dict[int, tuple[int, str]]) -> str:
    prec, text = out[id(e)]
    return f"({text})" if prec < need else text


def to_string(e: Expr) -> str:
    """Infix form of ``e``; ``parse`` of the result evaluates identically."""
    out: dict[int, tuple[int, str]] = {}
    for node in topo_order([e]):
        kind = node.kind
        if kind == "const":
            v = node.payload
            text = repr(v)
            prec = _PREC_ATOM if v >= 0 else _PREC_NEG
        elif kind == "var":
            text, prec = node.payload, _PREC_ATOM
        elif kind == "add":
            a, b = node.args
            text = f"{_render(a, _PREC_ADD, out)} + {_render(b, _PREC_ADD + 1, out)}"
            prec = _PREC_ADD
        elif kind == "neg":
            text = f"-{_render(node.args[0], _PREC_POW, out)}"
            prec = _PREC_NEG
        elif kind == "mul":
            a, b = node.args
            text = f"{_render(a, _PREC_MUL, out)}*{_render(b, _PREC_MUL + 1, out)}"
            prec = _PREC_MUL
        elif kind == "div":
            a, b = node.args
            text = f"{_render(a, _PREC_MUL, out)}/{_render(b, _PREC_MUL + 1, out)}"
            prec = _PREC_MUL
        elif kind in ("powi", "powr"):
            base = _render(node.args[0], _PREC_ATOM, out)
            text = f"{base}^{node.payload!r}" if kind == "powr" else f"{base}^{node.payload}"
            prec = _PREC_POW
        else:  # sin / cos / exp
            inner = out[id(node.args[0])][1]
            text = f"{kind}({inner})"
            prec = _PREC_ATOM
        out[id(node)] = (prec, text)
    return out[id(e)][1]


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[a-zA-Z][a-zA-Z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)

_FUNCTIONS = {"sin": sin, "cos": cos, "exp": exp}


class _Parser:
    def __init__(self, text: str, allowed_vars: frozenset[str], params: Mapping[str, float]):
        self.text = text
        self.allowed = allowed_vars
        self.params = params
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                stripped = text[pos:].lstrip()
                if not stripped:
                    break
                raise ParseError(f"unexpected character {stripped[0]!r}", len(text) - len(stripped))
            for group in ("num", "ident", "op"):
                val = m.group(group)
                if val is not None:
                    self.tokens.append((group, val, m.start(group)))
                    break
            pos = m.end()
        self.i = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> tuple[str, str, int]:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of expression", len(self.text))
        self.i += 1
        return tok

    def expect_op(self, op: str):
        tok = self.peek()
        if tok is None or tok[0] != "op" or tok[1] != op:
            pos = tok[2] if tok else len(self.text)
            raise ParseError(f"expected {op!r}", pos)
        self.i += 1

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok is not None:
            raise ParseError(f"unexpected token {tok[1]!r}", tok[2])
        return e

    def expr(self) -> Expr:
        e = self.term()
        while (tok := self.peek()) and tok[0] == "op" and tok[1] in "+-":
            self.i += 1
            rhs = self.term()
            e = add(e, rhs) if tok[1] == "+" else self._guard(sub, tok[2], e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while (tok := self.peek()) and tok[0] == "op" and tok[1] in "*/":
            self.i += 1
            rhs = self.unary()
            e = mul(e, rhs) if tok[1] == "*" else self._guard(div, tok[2], e, rhs)
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok and tok[0] == "op" and tok[1] == "-":
            self.i += 1
            return neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        tok = self.peek()
        if tok and tok[0] == "op" and tok[1] == "^":
            self.i += 1
            exponent = self.unary()
            if exponent.kind != "const":
                raise ParseError("power exponent must be constant", tok[2])
            return self._guard(powr, tok[2], base, exponent.payload)
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.next()
        if kind == "num":
            return const(float(text))
        if kind == "ident":
            nxt = self.peek()
            if nxt and nxt[0] == "op" and nxt[1] == "(":
                fn = _FUNCTIONS.get(text)
                if fn is None:
                    raise ParseError(f"unknown function {text!r}", pos)
                self.i += 1
                arg = self.expr()
                self.expect_op(")")
                return fn(arg)
            if text in self.params:
                return const(self.params[text])
            if text in self.allowed:
                return var(text)
            raise ParseError(f"unknown identifier {text!r}", pos)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(f"unexpected token {text!r}", pos)

    @staticmethod
    def _guard(builder, pos: int, *args) -> Expr:
        try:
            return builder(*args)
        except ExprError as err:
            raise ParseError(str(err), pos) from None


def parse(
    text: str,
    allowed_vars: Iterable[str] = (),
    params: Mapping[str, float] | None = None,
) -> Expr:
    """Parse an infix expression string.

    Identifiers must name a variable in ``allowed_vars``, a parameter in
    ``params`` (folded to its constant value), or one of the functions
    sin, cos, exp.  Precedence: ``^`` (right-assoc) > unary ``-`` >
    ``* /`` > ``+ -``.
    """
    return _Parser(text, frozenset(allowed_vars), dict(params or {})).parse()


# --------------------------------------------------------------------------
# Compilation
# --------------------------------------------------------------------------

def _codegen(exprs: Sequence[Expr], var_order: Sequence[str], arg_unpack: str) -> str:
    index = {name: i for i, name in enumerate(var_order)}
    order = topo_order(exprs)
    last_use: dict[int, int] = {}
    for pos, node in enumerate(order):
        for child in node.args:
            last_use[id(child)] = pos
    for root in exprs:
        last_use[id(root)] = len(order)  # roots stay live to the end

    lines = [arg_unpack.format(n=len(var_order))]
    reg_of: dict[int, str] = {}
    free_regs: list[str] = []
    n_regs = 0

    def atom_text(node: Expr) -> str:
        if node.kind == "const":
            return repr(node.payload)
        if node.kind == "var":
            name = node.payload
            if name not in index:
                raise MissingVariableError(f"variable {name!r} not in compile order")
            return f"_v{index[name]}"
        return reg_of[id(node)]

    for pos, node in enumerate(order):
        if node.kind in _LEAF_KINDS:
            continue
        a = [atom_text(c) for c in node.args]
        kind = node.kind
        if kind == "add":
            rhs = f"{a[0]} + {a[1]}"
        elif kind == "mul":
            rhs = f"{a[0]} * {a[1]}"
        elif kind == "div":
            rhs = f"{a[0]} / {a[1]}"
        elif kind == "neg":
            rhs = f"-{a[0]}"
        elif kind == "powi":
            rhs = f"{a[0]} ** {node.payload}"
        elif kind == "powr":
            rhs = f"{a[0]} ** {node.payload!r}"
        else:
            rhs = f"_{kind}({a[0]})"
        # Release registers of children that die here, then allocate.
        for child in node.args:
            if (
                child.kind not in _LEAF_KINDS
                and last_use.get(id(child)) == pos
                and id(child) in reg_of
            ):
                free_regs.append(reg_of.pop(id(child)))
        if free_regs:
            reg = free_regs.pop()
        else:
            reg = f"_r{n_regs}"
            n_regs += 1
        reg_of[id(node)] = reg
        lines.append(f"    {reg} = {rhs}")

    results = ", ".join(atom_text(e) for e in exprs)
    lines.append(f"    return ({results},)")
    return "def _compiled(_z):\n" + "\n".join(lines)


def compile_scalar(
    exprs: Sequence[Expr], var_order: Sequence[str]
) -> Callable[[Sequence[float]], tuple[float, ...]]:
    """Compile to a fast scalar function of a state sequence.

    No domain guards: callers must keep denominators nonzero and real-power
    bases positive (use :func:`evaluate` for the guarded path).
    """
    targets = ", ".join(f"_v{i}" for i in range(len(var_order)))
    if not var_order:
        unpack = "    pass"
    elif len(var_order) == 1:
        unpack = f"    {targets}, = _z"
    else:
        unpack = f"    {targets} = _z"
    source = _codegen(exprs, var_order, unpack)
    ns = {"_sin": math.sin, "_cos": math.cos, "_exp": math.exp}
    code = compile(source, "<isotrig-scalar>", "exec")
    exec(code, ns)
    return ns["_compiled"]


def compile_batch(
    exprs: Sequence[Expr], var_order: Sequence[str]
) -> Callable[[np.ndarray], np.ndarray]:
    """Compile to a vectorized function of an (N, d) sample array.

    Returns an array of shape (len(exprs), N).  Unguarded like
    :func:`compile_scalar`.
    """
    targets = ", ".join(f"_v{i}" for i in range(len(var_order)))
    if not var_order:
        unpack = "    pass"
    else:
        tail = f"    {targets}, = _cols" if len(var_order) == 1 else f"    {targets} = _cols"
        unpack = "    _cols = [_z[:, _i] for _i in range({n})]\n" + tail
    source = _codegen(exprs, var_order, unpack)
    ns = {"_sin": np.sin, "_cos": np.cos, "_exp": np.exp, "np": np}
    code = compile(source, "<isotrig-batch>", "exec")
    exec(code, ns)
    fn = ns["_compiled"]
    n_out = len(exprs)

    def batch(z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        vals = fn(z)
        out = np.empty((n_out, z.shape[0]))
        for i, v in enumerate(vals):
            out[i] = v  # broadcasts constants
        return out

    return batch
