"""Parser and node indexer for the bundled mini-language.

The language is small on purpose: functions, assignments, ``if``/``else``,
``while``, ``return``, ``print`` and ``read``.  Every assignment target,
function parameter, predicate and return site becomes an indexed *node*,
the unit that later gets intervened on and observed.

A ``while`` loop owns two predicate nodes: the test evaluated before the
first iteration and the re-test evaluated at the end of every iteration.
This mirrors the usual rotation of ``while ((c = getchar()) != EOF)`` into a
pre-test plus a bottom test.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union


class MiniSyntaxError(Exception):
    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Pos:
    line: int
    column: int


@dataclass
class Const:
    value: object
    pos: Pos


@dataclass
class Var:
    name: str
    pos: Pos


@dataclass
class Unary:
    op: str
    operand: "Expr"
    pos: Pos


@dataclass
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    pos: Pos


@dataclass
class Call:
    name: str
    args: list
    pos: Pos


@dataclass
class Read:
    """``read()`` yields the next token; ``read(x)`` stores it into ``x``."""

    target: Optional[str]
    pos: Pos
    target_pos: Optional[Pos] = None


Expr = Union[Const, Var, Unary, Binary, Call, Read]


@dataclass
class Assign:
    name: str
    value: Expr
    pos: Pos


@dataclass
class If:
    cond: Expr
    then: list
    orelse: list
    pos: Pos


@dataclass
class While:
    cond: Expr
    body: list
    pos: Pos
    end_pos: Pos  # closing brace; the re-test node lives here


@dataclass
class Return:
    value: Optional[Expr]
    pos: Pos


@dataclass
class Print:
    value: Expr
    pos: Pos


@dataclass
class ExprStmt:
    value: Expr
    pos: Pos


Stmt = Union[Assign, If, While, Return, Print, ExprStmt]


@dataclass
class FunctionDef:
    name: str
    params: list
    param_pos: list
    body: list
    pos: Pos


@dataclass
class GlobalDecl:
    name: str
    value: Expr
    pos: Pos


@dataclass(frozen=True)
class Domain:
    kind: str  # bool | int | float | string | bounded-int
    lo: Optional[int] = None
    hi: Optional[int] = None

    def __str__(self):
        if self.kind == "bounded-int":
            return f"bounded-int({self.lo},{self.hi})"
        return self.kind


@dataclass
class Program:
    functions: list
    entry: str = "main"
    globals: list = field(default_factory=list)
    domains: dict = field(default_factory=dict)
    # top-level items in source order, used for indexing and pretty-printing
    items: list = field(default_factory=list)

    def function(self, name):
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)


@dataclass(frozen=True)
class Node:
    index: int
    kind: str  # assign-lhs | parameter | predicate | return | output
    variable: str
    function: str
    line: int
    column: int
    domain: Optional[Domain] = None

    @property
    def location(self):
        return (self.function, self.line, self.column)

    @property
    def label(self):
        return f"<{self.index}>{self.variable}"


# --------------------------------------------------------------------------
# Lexer

KEYWORDS = {"def", "if", "else", "while", "return", "print", "read", "true", "false", "var", "domain"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<pragma>\#[ \t]*domain\b)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<float>\d+\.\d*|\.\d+)
  | (?P<int>\d+)
  | (?P<str>"(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*')
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>==|!=|<=|>=|&&|\|\||[-+*/%<>=!(){},;:.])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str
    text: str
    value: object
    pos: Pos


def _unquote(text):
    body = text[1:-1]
    if text[0] == "'":
        body = body.replace('\\"', '"').replace('"', '\\"').replace("\\'", "'")
    return json.loads('"' + body + '"')


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, line_start, i = 1, 0, 0
    depth = 0
    while i < len(source):
        m = _TOKEN_RE.match(source, i)
        pos = Pos(line, i - line_start + 1)
        if m is None:
            raise MiniSyntaxError(f"unexpected character {source[i]!r}", pos.line, pos.column)
        kind = m.lastgroup
        text = m.group()
        i = m.end()
        if kind == "nl":
            if depth == 0:
                tokens.append(Token("nl", text, None, pos))
            line += 1
            line_start = i
            continue
        if kind in ("ws", "comment"):
            continue
        if kind == "pragma":
            tokens.append(Token("name", "domain", None, pos))
            continue
        if kind == "int":
            tokens.append(Token("num", text, int(text), pos))
        elif kind == "float":
            tokens.append(Token("num", text, float(text), pos))
        elif kind == "str":
            try:
                tokens.append(Token("str", text, _unquote(text), pos))
            except ValueError:
                raise MiniSyntaxError("bad string literal", pos.line, pos.column) from None
        elif kind == "name":
            tokens.append(Token("kw" if text in KEYWORDS else "name", text, text, pos))
        else:
            if text == "(":
                depth += 1
            elif text == ")":
                depth = max(0, depth - 1)
            tokens.append(Token("op", text, text, pos))
    tokens.append(Token("eof", "", None, Pos(line, i - line_start + 1)))
    return tokens


# --------------------------------------------------------------------------
# Parser

_BINARY_LEVELS = [
    ("||",),
    ("&&",),
    ("==", "!=", "<", "<=", ">", ">="),
    ("+", "-"),
    ("*", "/", "%"),
]


class _Parser:
    def __init__(self, source):
        self.toks = tokenize(source)
        self.i = 0

    # helpers
    def peek(self, offset=0):
        return self.toks[min(self.i + offset, len(self.toks) - 1)]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        return MiniSyntaxError(msg, tok.pos.line, tok.pos.column)

    def at(self, text):
        tok = self.peek()
        return tok.kind in ("op", "kw") and tok.text == text

    def expect(self, text):
        tok = self.peek()
        if tok.kind in ("op", "kw") and tok.text == text:
            return self.next()
        shown = tok.text or "end of input"
        raise self.error(f"expected {text!r}, found {shown!r}")

    def expect_name(self):
        tok = self.peek()
        if tok.kind != "name":
            raise self.error(f"expected identifier, found {tok.text or 'end of input'!r}")
        return self.next()

    def skip_newlines(self):
        while self.peek().kind == "nl" or self.at(";"):
            self.next()

    # top level
    def program(self) -> Program:
        prog = Program(functions=[])
        self.skip_newlines()
        while self.peek().kind != "eof":
            tok = self.peek()
            if tok.kind == "kw" and tok.text == "def":
                fn = self.function()
                if any(f.name == fn.name for f in prog.functions):
                    raise MiniSyntaxError(f"duplicate function {fn.name!r}", fn.pos.line, fn.pos.column)
                prog.functions.append(fn)
                prog.items.append(fn)
            elif tok.kind == "kw" and tok.text == "var":
                self.next()
                name = self.expect_name()
                self.expect("=")
                decl = GlobalDecl(name.text, self.expr(), name.pos)
                prog.globals.append(decl)
                prog.items.append(decl)
            elif (tok.kind in ("kw", "name")) and tok.text == "domain":
                self.next()
                qual = self.expect_name().text
                if self.at("."):
                    self.next()
                    qual += "." + self.expect_name().text
                self.expect(":")
                dom = self.domain()
                prog.domains[qual] = dom
                prog.items.append(("domain", qual, dom))
            else:
                raise self.error(f"unexpected {tok.text!r} at top level")
            self.skip_newlines()
        if not any(f.name == prog.entry for f in prog.functions):
            raise MiniSyntaxError(f"no entry function {prog.entry!r}", 1, 1)
        for fn in prog.functions:
            _check_returns(fn)
        return prog

    def domain(self) -> Domain:
        tok = self.expect_name()
        kind = tok.text
        if kind in ("bool", "int", "float", "string"):
            return Domain(kind)
        if kind == "bounded":
            self.expect("-")
            if self.expect_name().text != "int":
                raise self.error("expected bounded-int", tok)
            self.expect("(")
            lo = self.signed_int()
            self.expect(",")
            hi = self.signed_int()
            self.expect(")")
            if lo > hi:
                raise self.error("empty bounded-int range", tok)
            return Domain("bounded-int", lo, hi)
        raise self.error(f"unknown domain {kind!r}", tok)

    def signed_int(self):
        neg = False
        if self.at("-"):
            self.next()
            neg = True
        tok = self.next()
        if tok.kind != "num" or not isinstance(tok.value, int):
            raise self.error("expected integer", tok)
        return -tok.value if neg else tok.value

    def function(self) -> FunctionDef:
        start = self.expect("def")
        name = self.expect_name()
        self.expect("(")
        params, ppos = [], []
        if not self.at(")"):
            while True:
                p = self.expect_name()
                if p.text in params:
                    raise self.error(f"duplicate parameter {p.text!r}", p)
                params.append(p.text)
                ppos.append(p.pos)
                if not self.at(","):
                    break
                self.next()
        self.expect(")")
        body, _ = self.block()
        return FunctionDef(name.text, params, ppos, body, start.pos)

    def block(self):
        self.skip_newlines()
        self.expect("{")
        stmts = []
        self.skip_newlines()
        while not self.at("}"):
            if self.peek().kind == "eof":
                raise self.error("unterminated block")
            stmts.append(self.statement())
            self.skip_newlines()
        end = self.expect("}")
        return stmts, end.pos

    def body(self):
        """A braced block or a single statement."""
        self.skip_newlines()
        if self.at("{"):
            return self.block()[0]
        return [self.statement()]

    def statement(self) -> Stmt:
        tok = self.peek()
        if tok.kind == "kw":
            if tok.text == "if":
                return self.if_stmt()
            if tok.text == "while":
                self.next()
                self.expect("(")
                cond = self.expr()
                self.expect(")")
                body, end = self.block()
                return While(cond, body, tok.pos, end)
            if tok.text == "return":
                self.next()
                if self.peek().kind in ("nl", "eof") or self.at("}") or self.at(";"):
                    return Return(None, tok.pos)
                return Return(self.expr(), tok.pos)
            if tok.text == "print":
                self.next()
                self.expect("(")
                value = self.expr()
                self.expect(")")
                return Print(value, tok.pos)
            if tok.text == "read":
                return ExprStmt(self.expr(), tok.pos)
        if tok.kind == "name":
            if self.peek(1).kind == "op" and self.peek(1).text == "=":
                self.next()
                self.next()
                return Assign(tok.text, self.expr(), tok.pos)
            if self.peek(1).kind == "op" and self.peek(1).text == "(":
                return ExprStmt(self.expr(), tok.pos)
        raise self.error(f"unexpected {tok.text or 'end of input'!r}")

    def if_stmt(self) -> If:
        tok = self.expect("if")
        self.expect("(")
        cond = self.expr()
        self.expect(")")
        then = self.body()
        # `else` may sit on the next line
        save = self.i
        self.skip_newlines()
        if self.at("else"):
            self.next()
            self.skip_newlines()
            orelse = [self.if_stmt()] if self.at("if") else self.body()
        else:
            self.i = save
            orelse = []
        return If(cond, then, orelse, tok.pos)

    # expressions
    def expr(self, level=0) -> Expr:
        if level == len(_BINARY_LEVELS):
            return self.unary()
        left = self.expr(level + 1)
        ops = _BINARY_LEVELS[level]
        while self.peek().kind == "op" and self.peek().text in ops:
            op = self.next()
            right = self.expr(level + 1)
            left = Binary(op.text, left, right, op.pos)
        return left

    def unary(self) -> Expr:
        if self.at("!") or self.at("-"):
            op = self.next()
            return Unary(op.text, self.unary(), op.pos)
        return self.primary()

    def primary(self) -> Expr:
        tok = self.next()
        if tok.kind in ("num", "str"):
            return Const(tok.value, tok.pos)
        if tok.kind == "kw" and tok.text in ("true", "false"):
            return Const(tok.text == "true", tok.pos)
        if tok.kind == "kw" and tok.text == "read":
            self.expect("(")
            if self.at(")"):
                self.next()
                return Read(None, tok.pos)
            target = self.expect_name()
            self.expect(")")
            return Read(target.text, tok.pos, target.pos)
        if tok.kind == "name":
            if self.at("("):
                self.next()
                args = []
                if not self.at(")"):
                    while True:
                        args.append(self.expr())
                        if not self.at(","):
                            break
                        self.next()
                self.expect(")")
                return Call(tok.text, args, tok.pos)
            return Var(tok.text, tok.pos)
        if tok.kind == "op" and tok.text == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        raise self.error(f"unexpected {tok.text or 'end of input'!r} in expression", tok)


def _terminates(stmts) -> bool:
    if not stmts:
        return False
    last = stmts[-1]
    if isinstance(last, Return):
        return True
    if isinstance(last, If):
        return _terminates(last.then) and _terminates(last.orelse)
    return False


def _walk_stmts(stmts) -> Iterator[Stmt]:
    for s in stmts:
        yield s
        if isinstance(s, If):
            yield from _walk_stmts(s.then)
            yield from _walk_stmts(s.orelse)
        elif isinstance(s, While):
            yield from _walk_stmts(s.body)


def _check_returns(fn: FunctionDef):
    returns = [s for s in _walk_stmts(fn.body) if isinstance(s, Return)]
    valued = [r for r in returns if r.value is not None]
    if valued and len(valued) != len(returns):
        r = next(r for r in returns if r.value is None)
        raise MiniSyntaxError(f"bare return in value-returning function {fn.name!r}", r.pos.line, r.pos.column)
    if valued and not _terminates(fn.body):
        raise MiniSyntaxError(f"function {fn.name!r} may end without returning a value", fn.pos.line, fn.pos.column)


def parse(source: str) -> Program:
    """Parse mini-language source text into a :class:`Program`."""
    return _Parser(source).program()


# --------------------------------------------------------------------------
# Node indexing
#
# Sites are keyed by object identity of the AST element plus a role tag, so the
# interpreter can find the node index of whatever it is executing.


def walk_expr(e) -> Iterator[Expr]:
    yield e
    if isinstance(e, Unary):
        yield from walk_expr(e.operand)
    elif isinstance(e, Binary):
        yield from walk_expr(e.left)
        yield from walk_expr(e.right)
    elif isinstance(e, Call):
        for a in e.args:
            yield from walk_expr(a)


class NodeTable:
    """Index of program nodes plus the site -> node mapping used at runtime."""

    def __init__(self, program: Program):
        self.program = program
        self.nodes: list[Node] = []
        self.sites: dict = {}
        self._pred_counter = 0
        self._build()

    def __reduce__(self):
        # site keys are object ids, so rebuild rather than copy them
        return (NodeTable, (self.program,))

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def __getitem__(self, index) -> Node:
        return self.nodes[index - 1]

    def site(self, obj, role):
        return self.sites[(id(obj), role)]

    def _domain_for(self, fn_name, var, kind):
        if kind == "predicate":
            return Domain("bool")
        doms = self.program.domains
        return doms.get(f"{fn_name}.{var}", doms.get(var))

    def _add(self, obj, role, kind, var, fn_name, pos):
        node = Node(len(self.nodes) + 1, kind, var, fn_name, pos.line, pos.column,
                    self._domain_for(fn_name, var, kind))
        self.nodes.append(node)
        self.sites[(id(obj), role)] = node.index
        return node.index

    def _expr(self, e, fn_name):
        for sub in walk_expr(e):
            if isinstance(sub, Read) and sub.target is not None:
                self._add(sub, "read", "assign-lhs", sub.target, fn_name, sub.target_pos)

    def _stmts(self, stmts, fn_name):
        for s in stmts:
            if isinstance(s, Assign):
                self._add(s, "lhs", "assign-lhs", s.name, fn_name, s.pos)
                self._expr(s.value, fn_name)
            elif isinstance(s, If):
                self._pred_counter += 1
                self._add(s, "pred", "predicate", f"_pred{self._pred_counter}", fn_name, s.pos)
                self._expr(s.cond, fn_name)
                self._stmts(s.then, fn_name)
                self._stmts(s.orelse, fn_name)
            elif isinstance(s, While):
                self._pred_counter += 1
                name = f"_pred{self._pred_counter}"
                self._add(s, "pred", "predicate", name, fn_name, s.pos)
                self._expr(s.cond, fn_name)
                self._stmts(s.body, fn_name)
                # the bottom re-test evaluates the condition again, so read
                # targets inside it are distinct sites with their own nodes
                self._add(s, "pred-back", "predicate", name, fn_name, s.end_pos)
                for sub in walk_expr(s.cond):
                    if isinstance(sub, Read) and sub.target is not None:
                        self._add(sub, "read-back", "assign-lhs", sub.target, fn_name, s.end_pos)
            elif isinstance(s, Return):
                if s.value is not None:
                    self._add(s, "ret", "return", "_ret", fn_name, s.pos)
                    self._expr(s.value, fn_name)
            elif isinstance(s, (Print, ExprStmt)):
                self._expr(s.value, fn_name)

    def _build(self):
        prints = []
        for item in self.program.items:
            if isinstance(item, GlobalDecl):
                self._add(item, "lhs", "assign-lhs", item.name, "<global>", item.pos)
                self._expr(item.value, "<global>")
            elif isinstance(item, FunctionDef):
                for p, ppos in zip(item.params, item.param_pos):
                    self._add(item, ("param", p), "parameter", p, item.name, ppos)
                self._stmts(item.body, item.name)
                prints += [(item.name, s) for s in _walk_stmts(item.body) if isinstance(s, Print)]
        if prints:
            fn_name, first = prints[0]
            # the printed sequence acts as one observable output node
            node = Node(len(self.nodes) + 1, "output", "_out", fn_name, first.pos.line, first.pos.column, None)
            self.nodes.append(node)
            self.sites[("output",)] = node.index

    @property
    def output_index(self) -> Optional[int]:
        return self.sites.get(("output",))


def index_nodes(program: Program) -> list[Node]:
    """All nodes of ``program`` in deterministic source order, indices 1..n."""
    return list(NodeTable(program).nodes)


# --------------------------------------------------------------------------
# Pretty printer

_PREC = {op: lvl for lvl, ops in enumerate(_BINARY_LEVELS) for op in ops}


def _fmt_const(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    return repr(v)


def format_expr(e, parent_level=-1) -> str:
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Read):
        return f"read({e.target or ''})"
    if isinstance(e, Call):
        return f"{e.name}({', '.join(format_expr(a) for a in e.args)})"
    if isinstance(e, Unary):
        return f"{e.op}{format_expr(e.operand, len(_BINARY_LEVELS))}"
    if isinstance(e, Binary):
        lvl = _PREC[e.op]
        # left-associative: the right operand needs parens at equal level
        text = f"{format_expr(e.left, lvl - 1)} {e.op} {format_expr(e.right, lvl)}"
        return f"({text})" if lvl <= parent_level else text
    raise TypeError(e)


def _fmt_stmts(stmts, indent, out):
    pad = "    " * indent
    for s in stmts:
        if isinstance(s, Assign):
            out.append(f"{pad}{s.name} = {format_expr(s.value)}")
        elif isinstance(s, If):
            out.append(f"{pad}if ({format_expr(s.cond)}) {{")
            _fmt_stmts(s.then, indent + 1, out)
            if s.orelse:
                out.append(f"{pad}}} else {{")
                _fmt_stmts(s.orelse, indent + 1, out)
            out.append(f"{pad}}}")
        elif isinstance(s, While):
            out.append(f"{pad}while ({format_expr(s.cond)}) {{")
            _fmt_stmts(s.body, indent + 1, out)
            out.append(f"{pad}}}")
        elif isinstance(s, Return):
            out.append(f"{pad}return" + (f" {format_expr(s.value)}" if s.value is not None else ""))
        elif isinstance(s, Print):
            out.append(f"{pad}print({format_expr(s.value)})")
        elif isinstance(s, ExprStmt):
            out.append(f"{pad}{format_expr(s.value)}")


def pretty(program: Program) -> str:
    out = []
    for item in program.items:
        if isinstance(item, tuple):
            _, qual, dom = item
            out.append(f"domain {qual} : {dom}")
        elif isinstance(item, GlobalDecl):
            out.append(f"var {item.name} = {format_expr(item.value)}")
        else:
            out.append(f"def {item.name}({', '.join(item.params)}) {{")
            _fmt_stmts(item.body, 1, out)
            out.append("}")
    return "\n".join(out) + "\n"


def used_variables(e) -> set:
    return {sub.name for sub in walk_expr(e) if isinstance(sub, Var)}


def called_functions(e) -> set:
    return {sub.name for sub in walk_expr(e) if isinstance(sub, Call)}
