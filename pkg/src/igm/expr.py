"""Parse, evaluate, and differentiate the real-valued expressions that metric
components and compressibility-removing factors are written in.

Grammar (infix, standard precedence, ``^`` for powers)::

    expr     := term  (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := '-' unary | power
    power    := atom ['^' exponent]
    atom     := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
    exponent := ['-'] NUMBER ['/' NUMBER] | '(' ['-'] NUMBER ['/' NUMBER] ')'

Exponents are rational constants only, which keeps symbolic differentiation
closed over the node set.  ``pi`` is a built-in constant; the unary functions
are ``sin``, ``cos``, ``tan``, ``exp``, ``log``, ``sqrt``.

Nodes are immutable after construction and evaluation is pure, so trees can
be shared freely.  ``evaluate`` accepts floats or numpy arrays in the
assignment and broadcasts elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping, Union

import numpy as np

__all__ = [
    "Node",
    "Constant",
    "Variable",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Neg",
    "Pow",
    "Call",
    "ComplexExpr",
    "ExprError",
    "ExprSyntaxError",
    "UnknownVariableError",
    "MissingVariableError",
    "EvaluationDomainError",
    "parse_expression",
    "evaluate",
    "differentiate",
    "simplify",
    "substitute",
    "free_vars",
    "to_string",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_",
    "call",
    "const",
    "var",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt")

Scalar = Union[float, np.ndarray]


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    """Malformed expression text; carries the byte offset of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class UnknownVariableError(ExprSyntaxError):
    """Identifier outside the allowed variable set."""

    def __init__(self, name: str, position: int):
        super().__init__(f"unknown variable {name!r}", position)
        self.name = name


class MissingVariableError(ExprError):
    """Evaluation asked for a variable absent from the assignment."""


class EvaluationDomainError(ExprError):
    """Evaluation hit a singular point; carries the offending node."""

    def __init__(self, message: str, node: "Node"):
        super().__init__(f"{message} in {node}")
        self.node = node


class Node:
    """Base expression node. Subclasses are frozen dataclasses."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_string(self)


@dataclass(frozen=True)
class Constant(Node):
    value: float


@dataclass(frozen=True)
class Variable(Node):
    name: str


@dataclass(frozen=True)
class Add(Node):
    left: Node
    right: Node


@dataclass(frozen=True)
class Sub(Node):
    left: Node
    right: Node


@dataclass(frozen=True)
class Mul(Node):
    left: Node
    right: Node


@dataclass(frozen=True)
class Div(Node):
    left: Node
    right: Node


@dataclass(frozen=True)
class Neg(Node):
    arg: Node


@dataclass(frozen=True)
class Pow(Node):
    """base ** exponent with a rational constant exponent, kept in lowest
    terms by Fraction; exponent 1 never survives construction."""

    base: Node
    exponent: Fraction


@dataclass(frozen=True)
class Call(Node):
    fn: str
    arg: Node


# ---------------------------------------------------------------------------
# constructors with identity / zero / literal folding
# ---------------------------------------------------------------------------


def const(x: float) -> Constant:
    return Constant(float(x))


def var(name: str) -> Variable:
    return Variable(name)


def _is_const(e: Node, value: float | None = None) -> bool:
    if not isinstance(e, Constant):
        return False
    return value is None or e.value == value


def add(a: Node, b: Node) -> Node:
    if isinstance(a, Constant) and isinstance(b, Constant):
        return Constant(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Node, b: Node) -> Node:
    if isinstance(a, Constant) and isinstance(b, Constant):
        return Constant(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Node, b: Node) -> Node:
    if isinstance(a, Constant) and isinstance(b, Constant):
        return Constant(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Constant(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def div(a: Node, b: Node) -> Node:
    if isinstance(a, Constant) and isinstance(b, Constant) and b.value != 0.0:
        return Constant(a.value / b.value)
    if _is_const(a, 0.0):
        return Constant(0.0)
    if _is_const(b, 1.0):
        return a
    return Div(a, b)


def neg(a: Node) -> Node:
    if isinstance(a, Constant):
        return Constant(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def pow_(base: Node, exponent: Fraction | int) -> Node:
    q = Fraction(exponent)
    if q == 0:
        return Constant(1.0)
    if q == 1:
        return base
    if isinstance(base, Pow):
        return pow_(base.base, base.exponent * q)
    if isinstance(base, Constant):
        c = base.value
        if q.denominator == 1 and (c != 0.0 or q > 0):
            return Constant(float(c ** q.numerator))
        if c > 0.0:
            return Constant(float(c ** float(q)))
        # 0 or negative base with fractional exponent: defer to evaluation
    return Pow(base, q)


def call(fn: str, arg: Node) -> Node:
    if fn not in FUNCTIONS:
        raise ExprError(f"unknown function {fn!r}")
    if isinstance(arg, Constant):
        folded = _apply_fn(fn, arg.value, None)
        if folded is not None:
            return Constant(folded)
    return Call(fn, arg)


def simplify(e: Node) -> Node:
    """Rebuild bottom-up through the folding constructors."""
    if isinstance(e, (Constant, Variable)):
        return e
    if isinstance(e, Add):
        return add(simplify(e.left), simplify(e.right))
    if isinstance(e, Sub):
        return sub(simplify(e.left), simplify(e.right))
    if isinstance(e, Mul):
        return mul(simplify(e.left), simplify(e.right))
    if isinstance(e, Div):
        return div(simplify(e.left), simplify(e.right))
    if isinstance(e, Neg):
        return neg(simplify(e.arg))
    if isinstance(e, Pow):
        return pow_(simplify(e.base), e.exponent)
    if isinstance(e, Call):
        return call(e.fn, simplify(e.arg))
    raise TypeError(f"not an expression node: {e!r}")


def substitute(e: Node, bindings: Mapping[str, Union[Node, float]]) -> Node:
    """Replace variables and refold, so fully-bound subtrees collapse to
    constants (partial evaluation)."""
    if isinstance(e, Variable):
        if e.name in bindings:
            v = bindings[e.name]
            return v if isinstance(v, Node) else Constant(float(v))
        return e
    if isinstance(e, Constant):
        return e
    if isinstance(e, Add):
        return add(substitute(e.left, bindings), substitute(e.right, bindings))
    if isinstance(e, Sub):
        return sub(substitute(e.left, bindings), substitute(e.right, bindings))
    if isinstance(e, Mul):
        return mul(substitute(e.left, bindings), substitute(e.right, bindings))
    if isinstance(e, Div):
        return div(substitute(e.left, bindings), substitute(e.right, bindings))
    if isinstance(e, Neg):
        return neg(substitute(e.arg, bindings))
    if isinstance(e, Pow):
        return pow_(substitute(e.base, bindings), e.exponent)
    if isinstance(e, Call):
        return call(e.fn, substitute(e.arg, bindings))
    raise TypeError(f"not an expression node: {e!r}")


def free_vars(e: Node) -> frozenset[str]:
    out: set[str] = set()

    def walk(n: Node) -> None:
        if isinstance(n, Variable):
            out.add(n.name)
        elif isinstance(n, (Add, Sub, Mul, Div)):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Neg):
            walk(n.arg)
        elif isinstance(n, Pow):
            walk(n.base)
        elif isinstance(n, Call):
            walk(n.arg)

    walk(e)
    return frozenset(out)


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5


def _prec(e: Node) -> int:
    if isinstance(e, Constant):
        return _PREC_ATOM if e.value >= 0 else 0
    if isinstance(e, (Variable, Call)):
        return _PREC_ATOM
    if isinstance(e, Pow):
        return _PREC_POW
    if isinstance(e, Neg):
        return _PREC_NEG
    if isinstance(e, (Mul, Div)):
        return _PREC_MUL
    return _PREC_ADD


def _fmt_number(x: float) -> str:
    if x == math.pi:
        return "pi"
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def _fmt_exponent(q: Fraction) -> str:
    if q.denominator == 1 and q >= 0:
        return str(q.numerator)
    if q.denominator == 1:
        return f"({q.numerator})"
    return f"({q.numerator}/{q.denominator})"


def to_string(e: Node) -> str:
    """Render so that parsing the result reproduces the tree (after the
    constructors' folding)."""

    def render(n: Node, min_prec: int) -> str:
        p = _prec(n)
        if isinstance(n, Constant):
            s = _fmt_number(n.value)
        elif isinstance(n, Variable):
            s = n.name
        elif isinstance(n, Add):
            s = f"{render(n.left, _PREC_ADD)} + {render(n.right, _PREC_ADD + 1)}"
        elif isinstance(n, Sub):
            s = f"{render(n.left, _PREC_ADD)} - {render(n.right, _PREC_ADD + 1)}"
        elif isinstance(n, Mul):
            s = f"{render(n.left, _PREC_MUL)}*{render(n.right, _PREC_MUL + 1)}"
        elif isinstance(n, Div):
            s = f"{render(n.left, _PREC_MUL)}/{render(n.right, _PREC_MUL + 1)}"
        elif isinstance(n, Neg):
            s = f"-{render(n.arg, _PREC_NEG)}"
        elif isinstance(n, Pow):
            s = f"{render(n.base, _PREC_ATOM)}^{_fmt_exponent(n.exponent)}"
        elif isinstance(n, Call):
            s = f"{n.fn}({render(n.arg, 0)})"
        else:
            raise TypeError(f"not an expression node: {n!r}")
        return f"({s})" if p < min_prec else s

    return render(e, _PREC_ADD)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            raise ExprSyntaxError(f"expected {ch!r}", self.pos)
        self.pos += 1

    def number(self) -> tuple[str, int]:
        self.skip_ws()
        start = self.pos
        i = self.pos
        t = self.text
        while i < len(t) and (t[i].isdigit() or t[i] == "."):
            i += 1
        if i < len(t) and t[i] in "eE":
            j = i + 1
            if j < len(t) and t[j] in "+-":
                j += 1
            if j < len(t) and t[j].isdigit():
                while j < len(t) and t[j].isdigit():
                    j += 1
                i = j
        if i == start:
            raise ExprSyntaxError("expected a number", start)
        self.pos = i
        return t[start:i], start

    def ident(self) -> tuple[str, int]:
        self.skip_ws()
        start = self.pos
        i = self.pos
        t = self.text
        while i < len(t) and (t[i].isalnum() or t[i] == "_"):
            i += 1
        self.pos = i
        return t[start:i], start


class _Parser:
    def __init__(self, text: str, allowed_vars: frozenset[str]):
        self.tk = _Tokenizer(text)
        self.allowed = allowed_vars

    def parse(self) -> Node:
        e = self.expr()
        self.tk.skip_ws()
        if self.tk.pos != len(self.tk.text):
            raise ExprSyntaxError("unexpected trailing input", self.tk.pos)
        return e

    def expr(self) -> Node:
        e = self.term()
        while True:
            c = self.tk.peek()
            if c == "+":
                self.tk.pos += 1
                e = add(e, self.term())
            elif c == "-":
                self.tk.pos += 1
                e = sub(e, self.term())
            else:
                return e

    def term(self) -> Node:
        e = self.unary()
        while True:
            c = self.tk.peek()
            if c == "*":
                self.tk.pos += 1
                e = mul(e, self.unary())
            elif c == "/":
                self.tk.pos += 1
                e = div(e, self.unary())
            else:
                return e

    def unary(self) -> Node:
        if self.tk.peek() == "-":
            self.tk.pos += 1
            return neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tk.peek() != "^":
            return base
        self.tk.pos += 1
        q = self.exponent()
        if self.tk.peek() == "^":
            raise ExprSyntaxError(
                "stacked exponents are ambiguous; parenthesize", self.tk.pos
            )
        return pow_(base, q)

    def exponent(self) -> Fraction:
        if self.tk.peek() == "(":
            self.tk.pos += 1
            q = self._signed_rational()
            self.tk.expect(")")
            return q
        return self._signed_rational()

    def _signed_rational(self) -> Fraction:
        sign = 1
        if self.tk.peek() == "-":
            self.tk.pos += 1
            sign = -1
        text, pos = self.tk.number()
        try:
            q = Fraction(text)
        except ValueError:
            raise ExprSyntaxError(f"bad exponent {text!r}", pos) from None
        if self.tk.peek() == "/":
            self.tk.pos += 1
            dtext, dpos = self.tk.number()
            try:
                d = Fraction(dtext)
            except ValueError:
                raise ExprSyntaxError(f"bad exponent denominator {dtext!r}", dpos) from None
            if d == 0:
                raise ExprSyntaxError("zero exponent denominator", dpos)
            q = q / d
        return sign * q

    def atom(self) -> Node:
        c = self.tk.peek()
        if c == "(":
            self.tk.pos += 1
            e = self.expr()
            self.tk.expect(")")
            return e
        if c.isdigit() or c == ".":
            text, pos = self.tk.number()
            try:
                return Constant(float(text))
            except ValueError:
                raise ExprSyntaxError(f"bad number {text!r}", pos) from None
        if c.isalpha() or c == "_":
            name, pos = self.tk.ident()
            if self.tk.peek() == "(":
                if name not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {name!r}", pos)
                self.tk.pos += 1
                arg = self.expr()
                self.tk.expect(")")
                return call(name, arg)
            if name == "pi":
                return Constant(math.pi)
            if name not in self.allowed:
                raise UnknownVariableError(name, pos)
            return Variable(name)
        raise ExprSyntaxError("expected a number, name, or parenthesis", self.tk.pos)


def parse_expression(text: str, allowed_vars) -> Node:
    """Parse ``text`` into an expression tree whose free variables are
    restricted to ``allowed_vars``."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(text, frozenset(allowed_vars)).parse()


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _any(x) -> bool:
    return bool(np.any(x))


def _apply_fn(fn: str, x, node: Node | None):
    """Apply a unary function; with node=None act as a fold probe that
    returns None instead of raising on domain trouble."""
    if fn == "sin":
        return np.sin(x)
    if fn == "cos":
        return np.cos(x)
    if fn == "tan":
        return np.tan(x)
    if fn == "exp":
        with np.errstate(over="ignore"):
            return np.exp(x)
    if fn == "log":
        if _any(np.asarray(x) <= 0.0):
            if node is None:
                return None
            raise EvaluationDomainError("log of a non-positive value", node)
        return np.log(x)
    if fn == "sqrt":
        if _any(np.asarray(x) < 0.0):
            if node is None:
                return None
            raise EvaluationDomainError("sqrt of a negative value", node)
        return np.sqrt(x)
    raise ExprError(f"unknown function {fn!r}")


def evaluate(e: Node, assignment: Mapping[str, Scalar]) -> Scalar:
    """Evaluate with floats or numpy arrays bound to the free variables."""
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, Variable):
        try:
            return assignment[e.name]
        except KeyError:
            raise MissingVariableError(f"no value assigned to {e.name!r}") from None
    if isinstance(e, Add):
        return evaluate(e.left, assignment) + evaluate(e.right, assignment)
    if isinstance(e, Sub):
        return evaluate(e.left, assignment) - evaluate(e.right, assignment)
    if isinstance(e, Mul):
        return evaluate(e.left, assignment) * evaluate(e.right, assignment)
    if isinstance(e, Div):
        num = evaluate(e.left, assignment)
        den = evaluate(e.right, assignment)
        if _any(np.asarray(den) == 0.0):
            raise EvaluationDomainError("division by zero", e)
        return num / den
    if isinstance(e, Neg):
        return -evaluate(e.arg, assignment)
    if isinstance(e, Pow):
        base = evaluate(e.base, assignment)
        q = e.exponent
        if q.denominator == 1:
            if q < 0 and _any(np.asarray(base) == 0.0):
                raise EvaluationDomainError("zero base with negative exponent", e)
            return np.power(base, q.numerator)
        if _any(np.asarray(base) < 0.0):
            raise EvaluationDomainError(
                "negative base with fractional exponent", e
            )
        if q < 0 and _any(np.asarray(base) == 0.0):
            raise EvaluationDomainError("zero base with negative exponent", e)
        return np.power(base, float(q))
    if isinstance(e, Call):
        return _apply_fn(e.fn, evaluate(e.arg, assignment), e)
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------


def differentiate(e: Node, name: str) -> Node:
    """Exact symbolic derivative with respect to ``name``."""
    if isinstance(e, Constant):
        return Constant(0.0)
    if isinstance(e, Variable):
        return Constant(1.0 if e.name == name else 0.0)
    if isinstance(e, Add):
        return add(differentiate(e.left, name), differentiate(e.right, name))
    if isinstance(e, Sub):
        return sub(differentiate(e.left, name), differentiate(e.right, name))
    if isinstance(e, Mul):
        a, b = e.left, e.right
        return add(
            mul(differentiate(a, name), b),
            mul(a, differentiate(b, name)),
        )
    if isinstance(e, Div):
        a, b = e.left, e.right
        return div(
            sub(mul(differentiate(a, name), b), mul(a, differentiate(b, name))),
            pow_(b, 2),
        )
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, name))
    if isinstance(e, Pow):
        u, q = e.base, e.exponent
        return mul(
            Constant(float(q)),
            mul(pow_(u, q - 1), differentiate(u, name)),
        )
    if isinstance(e, Call):
        u = e.arg
        du = differentiate(u, name)
        if e.fn == "sin":
            return mul(call("cos", u), du)
        if e.fn == "cos":
            return neg(mul(call("sin", u), du))
        if e.fn == "tan":
            return div(du, pow_(call("cos", u), 2))
        if e.fn == "exp":
            return mul(call("exp", u), du)
        if e.fn == "log":
            return div(du, u)
        if e.fn == "sqrt":
            return div(du, mul(Constant(2.0), call("sqrt", u)))
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# complex-valued pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComplexExpr:
    """Complex-valued function written as a pair of real expression trees."""

    re: Node
    im: Node

    @classmethod
    def from_real(cls, e: Node) -> "ComplexExpr":
        return cls(e, Constant(0.0))

    def value(self, assignment: Mapping[str, Scalar]):
        return evaluate(self.re, assignment) + 1j * evaluate(self.im, assignment)

    def diff(self, name: str) -> "ComplexExpr":
        return ComplexExpr(differentiate(self.re, name), differentiate(self.im, name))

    def conjugate(self) -> "ComplexExpr":
        return ComplexExpr(self.re, neg(self.im))

    def free_vars(self) -> frozenset[str]:
        return free_vars(self.re) | free_vars(self.im)


def as_complex(psi: Union[Node, ComplexExpr]) -> ComplexExpr:
    return psi if isinstance(psi, ComplexExpr) else ComplexExpr.from_real(psi)
