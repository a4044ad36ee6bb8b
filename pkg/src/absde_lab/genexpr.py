"""Small expression language for drivers and terminal functions.

Grammar (whitespace-insensitive)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := atom ('^' number)?
    atom   := number | ident | func '(' expr ')' | 'E' '[' expr ']' | '(' expr ')'
    func   := neg | abs | sin | cos | exp
    ident  := t | y | z | ydelta | zzeta | w

Scope rules: ydelta/zzeta are meaningful only inside E[...] (they name the
anticipated values the conditional expectation is taken of), and nothing
else may appear inside E[...] besides constants and functions of them.
Driver expressions may use t, y, z; terminal expressions g(t, W_t) may use
t, w.  Fractional exponents require an abs-wrapped base so evaluation stays
real.  There is no unary minus; write neg(x).

Evaluation works elementwise on numpy arrays as well as on floats, which is
what the solvers rely on.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Optional, Union

import numpy as np

_FUNCS = ("neg", "abs", "sin", "cos", "exp")
_IDENTS = ("t", "y", "z", "ydelta", "zzeta", "w")
_GENERATOR_VARS = {"t", "y", "z"}
_TERMINAL_VARS = {"t", "w"}
_ANTICIPATED_VARS = {"ydelta", "zzeta"}
_MAX_DEPTH = 200


class ParseError(ValueError):
    def __init__(self, message: str, offset: int, expected: tuple = ()):
        self.offset = offset
        self.expected = tuple(expected)
        detail = f"{message} at offset {offset}"
        if expected:
            detail += " (expected " + " | ".join(sorted(expected)) + ")"
        super().__init__(detail)


class ScopeError(ParseError):
    """Variable used outside the scope where it is defined."""


class MissingExpectation(LookupError):
    """The evaluation context supplies no value for an E[...] node."""


class DomainError(ArithmeticError):
    """Evaluation left the real domain (division by zero)."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: float


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Expect:
    inner: "Node"


Node = Union[Num, Var, Call, Pow, Bin, Expect]


def to_text(node: Node) -> str:
    """Canonical, reparseable serialization (fully parenthesized sums/products)."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.fn}({to_text(node.arg)})"
    if isinstance(node, Pow):
        base = to_text(node.base)
        if isinstance(node.base, (Bin, Pow)):
            base = f"({base})"
        return f"{base}^{repr(node.exponent)}"
    if isinstance(node, Bin):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Expect):
        return f"E[{to_text(node.inner)}]"
    raise TypeError(f"not an AST node: {node!r}")


def expectation_key(inner: Node) -> str:
    """Key under which an E[...] node's value is looked up: the canonical text."""
    return to_text(inner)


def expectation_terms(node: Node) -> list:
    """Distinct E[...] nodes in the tree, as (key, inner) pairs in first-seen order."""
    seen: dict = {}
    for sub in walk(node):
        if isinstance(sub, Expect):
            seen.setdefault(expectation_key(sub.inner), sub.inner)
    return list(seen.items())


def walk(node: Node) -> Iterator[Node]:
    yield node
    if isinstance(node, Call):
        yield from walk(node.arg)
    elif isinstance(node, Pow):
        yield from walk(node.base)
    elif isinstance(node, Bin):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, Expect):
        yield from walk(node.inner)


def variables_used(node: Node) -> set:
    return {sub.name for sub in walk(node) if isinstance(sub, Var)}


# ---------------------------------------------------------------------------
# Tokenizer / parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<punct>[-+*/^()\[\]]))"
)


def _tokens(src: str):
    out = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            stripped = src[pos:].lstrip()
            if not stripped:
                break
            bad = len(src) - len(stripped)
            raise ParseError(f"unexpected character {src[bad]!r}", bad)
        if m.lastgroup == "number":
            out.append(("number", m.group("number"), m.start("number")))
        elif m.lastgroup == "name":
            out.append(("name", m.group("name"), m.start("name")))
        else:
            out.append((m.group("punct"), m.group("punct"), m.start("punct")))
        pos = m.end()
    out.append(("eof", "", len(src)))
    return out


class _Parser:
    def __init__(self, src: str, scope: str):
        self.src = src
        self.toks = _tokens(src)
        self.pos = 0
        self.scope = scope  # "generator" | "terminal"
        self.depth = 0

    def peek(self):
        return self.toks[self.pos]

    def take(self):
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str):
        tok = self.peek()
        if tok[0] != kind:
            raise ParseError(f"unexpected {tok[1]!r}", tok[2], expected=(kind,))
        return self.take()

    def parse(self) -> Node:
        node = self.expr(inside_e=False)
        tok = self.peek()
        if tok[0] != "eof":
            raise ParseError(f"trailing input {tok[1]!r}", tok[2], expected=("eof",))
        return node

    def expr(self, inside_e: bool) -> Node:
        self.depth += 1
        if self.depth > _MAX_DEPTH:
            raise ParseError("expression too deeply nested", self.peek()[2])
        node = self.term(inside_e)
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            node = Bin(op, node, self.term(inside_e))
        self.depth -= 1
        return node

    def term(self, inside_e: bool) -> Node:
        node = self.factor(inside_e)
        while self.peek()[0] in ("*", "/"):
            op = self.take()[0]
            node = Bin(op, node, self.factor(inside_e))
        return node

    def factor(self, inside_e: bool) -> Node:
        base = self.atom(inside_e)
        if self.peek()[0] == "^":
            self.take()
            tok = self.peek()
            if tok[0] != "number":
                raise ParseError(
                    f"exponent must be a numeric literal, got {tok[1]!r}",
                    tok[2],
                    expected=("number",),
                )
            self.take()
            p = float(tok[1])
            if p != int(p) and (not isinstance(base, Call) or base.fn != "abs"):
                raise ParseError("fractional exponent requires an abs(...) base", tok[2])
            return Pow(base, p)
        return base

    def atom(self, inside_e: bool) -> Node:
        tok = self.peek()
        kind, text, off = tok
        if kind == "number":
            self.take()
            return Num(float(text))
        if kind == "(":
            self.take()
            node = self.expr(inside_e)
            self.expect(")")
            return node
        if kind == "name":
            self.take()
            if text == "E":
                if inside_e:
                    raise ScopeError("nested E[...] is not allowed", off)
                if self.scope != "generator":
                    raise ScopeError("E[...] is only allowed in driver expressions", off)
                self.expect("[")
                inner = self.expr(inside_e=True)
                self.expect("]")
                return Expect(inner)
            if text in _FUNCS:
                self.expect("(")
                arg = self.expr(inside_e)
                self.expect(")")
                return Call(text, arg)
            if text in _IDENTS:
                self._check_scope(text, off, inside_e)
                return Var(text)
            raise ParseError(f"unknown name {text!r}", off, expected=_FUNCS + _IDENTS + ("E",))
        raise ParseError(
            f"unexpected {text or kind!r}",
            off,
            expected=("number", "ident", "func(", "E[", "("),
        )

    def _check_scope(self, name: str, off: int, inside_e: bool) -> None:
        if name in _ANTICIPATED_VARS:
            if not inside_e:
                raise ScopeError(f"{name} is only meaningful inside E[...]", off)
            return
        if inside_e:
            raise ScopeError(
                f"{name} is not available inside E[...] (evaluated at anticipated slices)",
                off,
            )
        allowed = _GENERATOR_VARS if self.scope == "generator" else _TERMINAL_VARS
        if name not in allowed:
            raise ScopeError(f"{name} is not in scope for {self.scope} expressions", off)


def parse_generator(src: str) -> Node:
    """Parse a driver expression in variables t, y, z, E[... ydelta, zzeta ...]."""
    return _Parser(src, scope="generator").parse()


def parse_terminal(src: str) -> Node:
    """Parse a terminal expression g(t, w), w being the Brownian state."""
    return _Parser(src, scope="terminal").parse()


# ---------------------------------------------------------------------------
# Evaluation


def eval_node(node: Node, ctx: Mapping):
    """Evaluate over floats or numpy arrays; E[...] values come from ctx['expectations']."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return ctx[node.name]
        except KeyError:
            raise MissingExpectation(f"no value for variable {node.name!r}") from None
    if isinstance(node, Call):
        x = eval_node(node.arg, ctx)
        if node.fn == "neg":
            return -x
        if node.fn == "abs":
            return np.abs(x)
        if node.fn == "sin":
            return np.sin(x)
        if node.fn == "cos":
            return np.cos(x)
        return np.exp(x)
    if isinstance(node, Pow):
        base = eval_node(node.base, ctx)
        # np.power for both branches: plain-float bases then overflow to inf
        # instead of raising, matching the array path.
        if node.exponent == int(node.exponent):
            return np.power(base, int(node.exponent))
        return np.power(base, node.exponent)
    if isinstance(node, Bin):
        left = eval_node(node.left, ctx)
        right = eval_node(node.right, ctx)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if np.any(right == 0):
            raise DomainError("division by zero")
        return left / right
    if isinstance(node, Expect):
        key = expectation_key(node.inner)
        table = ctx.get("expectations", {})
        if key not in table:
            raise MissingExpectation(f"no value supplied for E[{key}]")
        return table[key]
    raise TypeError(f"not an AST node: {node!r}")


def eval_generator(ast: Node, ctx: Mapping) -> float:
    """Evaluate a driver AST at a scalar context; returns a float."""
    return float(eval_node(ast, ctx))


# ---------------------------------------------------------------------------
# Growth classification

_UNCLASSIFIED = None


def _degree(node: Node, var: str) -> Optional[float]:
    """Syntactic growth degree of the tree in `var`; None when unbounded/unknown.

    0 means bounded uniformly in var (constants, sin/cos of anything),
    1 linear, 2 quadratic, fractional values for abs(...)^p.  Conservative:
    anything the rules cannot bound propagates None.
    """
    if isinstance(node, Num):
        return 0.0
    if isinstance(node, Var):
        return 1.0 if node.name == var else 0.0
    if isinstance(node, Call):
        if node.fn in ("sin", "cos"):
            return 0.0
        if node.fn in ("abs", "neg"):
            return _degree(node.arg, var)
        inner = _degree(node.arg, var)  # exp
        return 0.0 if inner == 0.0 else _UNCLASSIFIED
    if isinstance(node, Pow):
        base = _degree(node.base, var)
        if base is None:
            return _UNCLASSIFIED
        return base * node.exponent
    if isinstance(node, Bin):
        if node.op == "/":
            # Safe only when the divisor is a pure constant expression.
            if variables_used(node.right) or any(
                isinstance(s, Expect) for s in walk(node.right)
            ):
                return _UNCLASSIFIED
            return _degree(node.left, var)
        left = _degree(node.left, var)
        right = _degree(node.right, var)
        if left is None or right is None:
            return _UNCLASSIFIED
        if node.op in ("+", "-"):
            return max(left, right)
        return left + right  # product adds degrees
    if isinstance(node, Expect):
        if var in _ANTICIPATED_VARS:
            return _degree(node.inner, var)
        return 0.0
    raise TypeError(f"not an AST node: {node!r}")


def _label(deg: Optional[float], occurs: bool) -> str:
    if deg is None or deg > 2.0:
        return "unclassified"
    if deg == 0.0:
        return "bounded" if occurs else "constant"
    if deg == 1.0:
        return "linear"
    if deg == 2.0:
        return "quadratic"
    return f"power({deg:g})"


@dataclass(frozen=True)
class GrowthReport:
    y_growth: str
    z_growth: str
    anticipated_growth: str
    ydelta_growth: str
    zzeta_growth: str
    splits_z_part: bool
    suggested_strategy: str


def _summands(node: Node) -> list:
    """Flatten a top-level +/- tree into its summands (signs dropped)."""
    if isinstance(node, Bin) and node.op in ("+", "-"):
        return _summands(node.left) + _summands(node.right)
    return [node]


_GROWTH_VARS = ("y", "z", "ydelta", "zzeta")


def _has_cross_product(node: Node) -> bool:
    """True when some product multiplies two different unbounded arguments.

    y*z is linear in each variable separately, so the marginal degrees stay
    small, but the joint growth is quadratic and no certified regime covers
    it; such drivers must be dispatched manually.
    """
    for sub in walk(node):
        if isinstance(sub, Bin) and sub.op == "*":
            left = {v for v in _GROWTH_VARS if _degree(sub.left, v) != 0.0}
            right = {v for v in _GROWTH_VARS if _degree(sub.right, v) != 0.0}
            if left and right and left != right:
                return True
    return False


def _has_z_split(node: Node) -> bool:
    """True when z occurs only in pure-z summands: driver = f(t,z) + h(t,y,E[...])."""
    used = variables_used(node)
    if "z" not in used:
        return False
    for part in _summands(node):
        part_vars = variables_used(part)
        has_expect = any(isinstance(s, Expect) for s in walk(part))
        if "z" in part_vars:
            if part_vars - {"z", "t"} or has_expect:
                return False
    return True


def analyze_growth(ast: Node) -> GrowthReport:
    """Conservative syntactic growth classification for strategy selection.

    Anything the structural rules cannot bound is reported unclassified and
    the suggestion falls back to manual; products of unbounded variables
    (e.g. y*z) land there on purpose.
    """
    used = variables_used(ast)
    deg = {v: _degree(ast, v) for v in ("y", "z", "ydelta", "zzeta")}
    labels = {v: _label(deg[v], v in used) for v in deg}
    ant_degs = [deg["ydelta"], deg["zzeta"]]
    if any(d is None for d in ant_degs):
        ant_label = "unclassified"
    else:
        ant_deg = max(ant_degs)
        ant_label = _label(ant_deg, bool({"ydelta", "zzeta"} & used))
    split = _has_z_split(ast)

    strategy = "manual"
    degs = [deg["y"], deg["z"], deg["ydelta"], deg["zzeta"]]
    if all(d is not None for d in degs) and not _has_cross_product(ast):
        dy, dz, dyd, dzz = degs
        if max(degs) <= 1.0:
            strategy = "lipschitz"
        elif dz == 2.0 and dy <= 1.0 and dyd <= 1.0 and dzz < 2.0:
            strategy = "global-stitch" if (split and dzz == 0.0) else "local-contraction"
        elif max(degs) <= 2.0:
            strategy = "picard-small"

    return GrowthReport(
        y_growth=labels["y"],
        z_growth=labels["z"],
        anticipated_growth=ant_label,
        ydelta_growth=labels["ydelta"],
        zzeta_growth=labels["zzeta"],
        splits_z_part=split,
        suggested_strategy=strategy,
    )
