"""Scalar expression trees: parsing, evaluation, printing and symbolic derivatives.

Problems are written as plain strings such as ``"exp(-rho*t)*x0"``.  This
module turns them into an immutable tree, evaluates that tree against a
binding environment and differentiates it exactly, so Jacobians used by the
integrators are symbolic rather than finite-difference approximations.

Grammar (standard precedence, powers right-associative)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | "+" unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | NAME | NAME "[" INT "]" | NAME "(" args ")" | "(" expr ")"

``x[1]`` is shorthand for the variable ``x1``; ``pow(a, b)`` and ``a^b`` build
the same node.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

__all__ = [
    "Expr", "Const", "Var", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Func",
    "ExprSyntaxError", "ExprEvalError", "NonSmoothError",
    "parse", "evaluate", "diff", "to_source", "variables", "lambdify", "lambdify_many",
    "FUNCTIONS",
]


class ExprSyntaxError(ValueError):
    """Raised on malformed input; carries the byte offset and expected tokens."""

    def __init__(self, message: str, offset: int, expected: Sequence[str] = ()):
        self.offset = offset
        self.expected = tuple(expected)
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class ExprEvalError(ArithmeticError):
    """Unbound variable or domain error during evaluation."""

    def __init__(self, message: str, node: "Expr | None" = None):
        self.node = node
        where = ""
        if node is not None:
            where = f" in '{to_source(node)}'"
            if node.pos is not None:
                where += f" (source offset {node.pos})"
        super().__init__(message + where)


class NonSmoothError(ValueError):
    """Raised by :func:`diff` on a primitive without a classical derivative."""


# ---------------------------------------------------------------------------
# nodes


@dataclass(frozen=True)
class Expr:
    pos: int | None = field(default=None, compare=False, repr=False, kw_only=True)

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Expr


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr


FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt", "abs")

_BINARY = {Add: "+", Sub: "-", Mul: "*", Div: "/"}


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),\[\]]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    i = 0
    n = len(source)
    while i < n:
        if source[i].isspace():
            i += 1
            continue
        m = _TOKEN.match(source, i)
        if m is None or m.lastgroup is None:
            raise ExprSyntaxError(f"unexpected character {source[i]!r}", i)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        i = m.end()
    tokens.append(("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.peek()
        if text != value or kind != "op":
            raise ExprSyntaxError(f"unexpected {_describe(kind, text)}", pos, [value])
        return self.advance()

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "eof":
            raise ExprSyntaxError(
                f"unexpected {_describe(kind, text)}", pos, ["+", "-", "*", "/", "^", "end of input"]
            )
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, pos = self.advance()
            right = self.term()
            left = (Add if op == "+" else Sub)(left, right, pos=pos)
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, pos = self.advance()
            right = self.unary()
            left = (Mul if op == "*" else Div)(left, right, pos=pos)
        return left

    def unary(self) -> Expr:
        kind, text, pos = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.unary(), pos=pos)
        if kind == "op" and text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, text, pos = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            return Pow(base, self.unary(), pos=pos)
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.advance()
        if kind == "num":
            return Const(float(text), pos=pos)
        if kind == "name":
            nk, nt, _ = self.peek()
            if nk == "op" and nt == "(":
                return self.call(text, pos)
            if nk == "op" and nt == "[":
                self.advance()
                ik, it, ipos = self.advance()
                if ik != "num" or not it.isdigit():
                    raise ExprSyntaxError("expected an integer index", ipos, ["integer"])
                self.expect("]")
                return Var(f"{text}{int(it)}", pos=pos)
            return Var(text, pos=pos)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {_describe(kind, text)}", pos, ["number", "name", "(", "-"])

    def call(self, name: str, pos: int) -> Expr:
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == "," and self.peek()[0] == "op":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        if name == "pow":
            if len(args) != 2:
                raise ExprSyntaxError("pow takes exactly two arguments", pos)
            return Pow(args[0], args[1], pos=pos)
        if name not in FUNCTIONS:
            raise ExprSyntaxError(f"unknown function {name!r}", pos, FUNCTIONS + ("pow",))
        if len(args) != 1:
            raise ExprSyntaxError(f"{name} takes exactly one argument", pos)
        return Func(name, args[0], pos=pos)


def _describe(kind: str, text: str) -> str:
    return "end of input" if kind == "eof" else repr(text)


def parse(source: str) -> Expr:
    """Parse an arithmetic expression string into an :class:`Expr` tree.

    >>> parse("t + 2*x0")
    Add(left=Var(name='t'), right=Mul(left=Const(value=2.0), right=Var(name='x0')))
    """
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2}


def _fmt_const(v: float) -> str:
    if v < 0 or math.copysign(1.0, v) < 0:
        return f"(-{_fmt_const(-v)})"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_source(e: Expr) -> str:
    """Render ``e`` back to a string that :func:`parse` maps to the same tree."""
    return _show(e, 0)


def _show(e: Expr, ctx: int) -> str:
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        s = "-" + _show(e.arg, 3)
        return f"({s})" if ctx > 0 else s
    if isinstance(e, Func):
        return f"{e.name}({_show(e.arg, 0)})"
    if isinstance(e, Pow):
        return f"pow({_show(e.base, 0)}, {_show(e.exponent, 0)})"
    prec = _PREC[type(e)]
    # left-associative: the right operand needs parens at equal precedence
    s = f"{_show(e.left, prec)} {_BINARY[type(e)]} {_show(e.right, prec + 1)}"
    return f"({s})" if ctx > prec else s


# ---------------------------------------------------------------------------
# evaluation


def variables(e: Expr) -> set[str]:
    """Names of all free variables in ``e``."""
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    out: set[str] = set()
    for child in _children(e):
        out |= variables(child)
    return out


def _children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, (Neg, Func)):
        return (e.arg,)
    if isinstance(e, Pow):
        return (e.base, e.exponent)
    if isinstance(e, (Add, Sub, Mul, Div)):
        return (e.left, e.right)
    return ()


def _pow(a: float, b: float, node: Expr) -> float:
    try:
        return math.pow(a, b)
    except ValueError:
        raise ExprEvalError(f"pow({a!r}, {b!r}) is undefined", node) from None
    except OverflowError:
        raise ExprEvalError(f"pow({a!r}, {b!r}) overflows", node) from None


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate ``e`` in IEEE double precision."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(env[e.name])
        except KeyError:
            raise ExprEvalError(f"unbound variable {e.name!r}", e) from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, env)
    if isinstance(e, Add):
        return evaluate(e.left, env) + evaluate(e.right, env)
    if isinstance(e, Sub):
        return evaluate(e.left, env) - evaluate(e.right, env)
    if isinstance(e, Mul):
        return evaluate(e.left, env) * evaluate(e.right, env)
    if isinstance(e, Div):
        den = evaluate(e.right, env)
        if den == 0.0:
            raise ExprEvalError("division by zero", e)
        return evaluate(e.left, env) / den
    if isinstance(e, Pow):
        return _pow(evaluate(e.base, env), evaluate(e.exponent, env), e)
    if isinstance(e, Func):
        a = evaluate(e.arg, env)
        if e.name == "log":
            if a <= 0.0:
                raise ExprEvalError(f"log of non-positive value {a!r}", e)
            return math.log(a)
        if e.name == "sqrt":
            if a < 0.0:
                raise ExprEvalError(f"sqrt of negative value {a!r}", e)
            return math.sqrt(a)
        if e.name == "exp":
            try:
                return math.exp(a)
            except OverflowError:
                raise ExprEvalError(f"exp({a!r}) overflows", e) from None
        return {"sin": math.sin, "cos": math.cos, "abs": abs}[e.name](a)
    raise TypeError(f"not an expression node: {e!r}")


_NP_NAMES = {"exp": "np.exp", "log": "np.log", "sin": "np.sin", "cos": "np.cos",
             "sqrt": "np.sqrt", "abs": "np.abs"}
_MATH_NAMES = {"exp": "_m.exp", "log": "_m.log", "sin": "_m.sin", "cos": "_m.cos",
               "sqrt": "_m.sqrt", "abs": "abs"}


def _code(e: Expr, args: Mapping[str, str], vectorized: bool) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return args[e.name]
    if isinstance(e, Neg):
        return f"(-{_code(e.arg, args, vectorized)})"
    if isinstance(e, Func):
        names = _NP_NAMES if vectorized else _MATH_NAMES
        return f"{names[e.name]}({_code(e.arg, args, vectorized)})"
    if isinstance(e, Pow):
        fn = "np.power" if vectorized else "_m.pow"
        b, x = _code(e.base, args, vectorized), _code(e.exponent, args, vectorized)
        if vectorized and isinstance(e.exponent, Const) and e.exponent.value == int(e.exponent.value):
            return f"(({b}) ** {int(e.exponent.value)})"
        return f"{fn}({b}, {x})"
    return f"({_code(e.left, args, vectorized)} {_BINARY[type(e)]} {_code(e.right, args, vectorized)})"


def lambdify(
    e: Expr,
    argnames: Sequence[str],
    constants: Mapping[str, float] | None = None,
    vectorized: bool = False,
) -> Callable[..., float]:
    """Compile ``e`` to a Python function of ``argnames``.

    Names listed in ``constants`` are baked in as literals.  With
    ``vectorized=True`` the function broadcasts over numpy arrays.  Domain
    errors surface as ``ValueError``/``ZeroDivisionError`` (scalar) or
    non-finite values (vectorized); callers needing located messages use
    :func:`evaluate`.
    """
    import numpy as np

    constants = dict(constants or {})
    args = {name: f"_a{i}" for i, name in enumerate(argnames)}
    for name, value in constants.items():
        if name not in args:
            args[name] = f"({float(value)!r})"
    missing = variables(e) - set(args)
    if missing:
        raise ExprEvalError(f"unbound variable(s) {sorted(missing)}", e)
    params = ", ".join(f"_a{i}" for i in range(len(argnames)))
    body = _code(e, args, vectorized)
    if vectorized and not (variables(e) & set(argnames)):
        # constant expressions must still broadcast to the argument shape
        first = "_a0" if argnames else "0.0"
        body = f"({body}) + np.zeros_like(np.asarray({first}, dtype=float))"
    src = f"def _f({params}):\n    return {body}\n"
    scope = {"np": np, "_m": math}
    exec(compile(src, f"<expr {to_source(e)}>", "exec"), scope)
    return scope["_f"]


def lambdify_many(
    exprs: Sequence[Expr],
    argnames: Sequence[str],
    constants: Mapping[str, float] | None = None,
) -> Callable[..., tuple]:
    """Compile several expressions into one scalar function returning a tuple.

    Cheaper than one :func:`lambdify` per expression when all are needed at
    the same arguments, as inside an integrator's right-hand side.
    """
    constants = dict(constants or {})
    args = {name: f"_a{i}" for i, name in enumerate(argnames)}
    for name, value in constants.items():
        if name not in args:
            args[name] = f"({float(value)!r})"
    for e in exprs:
        missing = variables(e) - set(args)
        if missing:
            raise ExprEvalError(f"unbound variable(s) {sorted(missing)}", e)
    params = ", ".join(f"_a{i}" for i in range(len(argnames)))
    body = ", ".join(_code(e, args, False) for e in exprs)
    src = f"def _f({params}):\n    return ({body},)\n"
    scope = {"_m": math}
    exec(compile(src, "<expr batch>", "exec"), scope)
    return scope["_f"]


# ---------------------------------------------------------------------------
# differentiation

_ZERO = Const(0.0)
_ONE = Const(1.0)


def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Add(a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _neg(b)
    return Sub(a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return _ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return _neg(b)
    if _is(b, -1.0):
        return _neg(a)
    return Mul(a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return _ZERO
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return Div(a, b)


def _powe(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return _ONE
    if _is(b, 1.0):
        return a
    return Pow(a, b)


def diff(e: Expr, var: str) -> Expr:
    """Symbolic derivative of ``e`` with respect to the variable ``var``.

    Only constant folding and 0/1 identities are applied to the result.
    ``abs`` raises :class:`NonSmoothError`.
    """
    if isinstance(e, Const):
        return _ZERO
    if isinstance(e, Var):
        return _ONE if e.name == var else _ZERO
    if isinstance(e, Neg):
        return _neg(diff(e.arg, var))
    if isinstance(e, Add):
        return _add(diff(e.left, var), diff(e.right, var))
    if isinstance(e, Sub):
        return _sub(diff(e.left, var), diff(e.right, var))
    if isinstance(e, Mul):
        return _add(_mul(diff(e.left, var), e.right), _mul(e.left, diff(e.right, var)))
    if isinstance(e, Div):
        da, db = diff(e.left, var), diff(e.right, var)
        if _is(db, 0.0):
            return _div(da, e.right)
        num = _sub(_mul(da, e.right), _mul(e.left, db))
        return _div(num, _powe(e.right, Const(2.0)))
    if isinstance(e, Pow):
        a, b = e.base, e.exponent
        da, db = diff(a, var), diff(b, var)
        if _is(db, 0.0):
            if _is(da, 0.0):
                return _ZERO
            # d(a^c) = c a^(c-1) a'; exponent is free of var
            lowered = _powe(a, _sub(b, _ONE))
            return _mul(_mul(b, lowered), da)
        # general case a^b (b' log a + b a'/a)
        inner = _add(_mul(db, Func("log", a)), _div(_mul(b, da), a))
        return _mul(e, inner)
    if isinstance(e, Func):
        da = diff(e.arg, var)
        if e.name == "abs":
            raise NonSmoothError(f"abs is not differentiable: '{to_source(e)}'")
        if _is(da, 0.0):
            return _ZERO
        a = e.arg
        if e.name == "exp":
            outer: Expr = e
        elif e.name == "log":
            return _div(da, a)
        elif e.name == "sin":
            outer = Func("cos", a)
        elif e.name == "cos":
            outer = _neg(Func("sin", a))
        elif e.name == "sqrt":
            return _div(da, _mul(Const(2.0), e))
        else:  # pragma: no cover - FUNCTIONS is closed
            raise NonSmoothError(e.name)
        return _mul(outer, da)
    raise TypeError(f"not an expression node: {e!r}")
