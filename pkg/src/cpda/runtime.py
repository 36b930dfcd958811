"""Instrumented interpreter: oracle runs, super-mutant runs and mutation sampling.

One interpreter serves both roles.  With no mutation active it simply logs
every node value (the oracle); given a :class:`MutationSpec` it overwrites the
target node's value at every hit before logging it.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .minilang import (
    Assign, Binary, Call, Const, Domain, ExprStmt, FunctionDef, GlobalDecl, If, Node,
    NodeTable, Print, Program, Read, Return, Unary, Var, While,
)

STEP_BUDGET = 10 ** 6
MAX_CALL_DEPTH = 200
EOF = ""  # value stored by read(x) once input is exhausted

OK, TIMEOUT, RUNTIME_ERROR = "ok", "timeout", "runtime-error"


@dataclass
class TestInput:
    __test__ = False  # not a pytest test class despite the name

    id: str
    tokens: list
    expected: Optional[list] = None
    verdict: Optional[str] = None  # pass | fail

    def __post_init__(self):
        if self.verdict is not None:
            if self.verdict not in ("pass", "fail"):
                raise ValueError(f"test {self.id}: verdict must be pass or fail")
            if self.expected is None:
                raise ValueError(f"test {self.id}: verdict given without expected output")


@dataclass(frozen=True)
class MutationSpec:
    target: int
    value: object = None
    negate: bool = False

    def key(self):
        return [self.target, "!neg" if self.negate else _encode_scalar(self.value)]


@dataclass
class RunResult:
    trajectories: list  # index 0 unused; trajectories[i] is node i's value sequence
    output: list
    status: str
    returned: object = None
    error: Optional[str] = None
    steps: int = 0
    lines: set = field(default_factory=set)
    events: Optional[list] = None  # node indices in execution order (oracle only)

    def trajectory(self, node):
        return self.trajectories[node]

    def covered(self, node):
        return len(self.trajectories[node]) > 0

    def observable(self):
        """What a test compares against: printed values, then main's return value."""
        out = list(self.output)
        if self.returned is not None:
            out.append(self.returned)
        return out


class _Timeout(Exception):
    pass


class MiniRuntimeError(Exception):
    pass


class _ReturnSignal(Exception):
    def __init__(self, value):
        self.value = value


def _truthy(v):
    if isinstance(v, (bool, int, float)):
        return bool(v)
    raise MiniRuntimeError(f"condition must be boolean or numeric, got {type(v).__name__}")


def _num(v, op):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise MiniRuntimeError(f"operator {op} needs numbers, got {type(v).__name__}")
    return v


def _arith(op, a, b):
    if op == "+" and isinstance(a, str) and isinstance(b, str):
        return a + b
    a, b = _num(a, op), _num(b, op)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0:
        raise MiniRuntimeError("division by zero")
    if op == "/":
        if isinstance(a, int) and isinstance(b, int):
            q = abs(a) // abs(b)
            return q if (a >= 0) == (b >= 0) else -q
        return a / b
    # C-style remainder: sign follows the dividend
    if isinstance(a, int) and isinstance(b, int):
        r = abs(a) % abs(b)
        return r if a >= 0 else -r
    return math.fmod(a, b)


def _compare(op, a, b):
    if op in ("==", "!="):
        same = type(a) is type(b) or (
            not isinstance(a, (bool, str)) and not isinstance(b, (bool, str)))
        eq = same and a == b
        return eq if op == "==" else not eq
    str_a, str_b = isinstance(a, str), isinstance(b, str)
    if str_a != str_b or isinstance(a, bool) or isinstance(b, bool):
        raise MiniRuntimeError(f"cannot order {type(a).__name__} and {type(b).__name__}")
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def _str_arg(v, name):
    if not isinstance(v, str):
        raise MiniRuntimeError(f"{name} expects a string")
    return v


BUILTINS = {
    "len": lambda s: len(_str_arg(s, "len")),
    "strip": lambda s: _str_arg(s, "strip").strip(),
    "rstrip": lambda s: _str_arg(s, "rstrip").rstrip(),
    "lstrip": lambda s: _str_arg(s, "lstrip").lstrip(),
    "endswith": lambda s, t: _str_arg(s, "endswith").endswith(_str_arg(t, "endswith")),
    "startswith": lambda s, t: _str_arg(s, "startswith").startswith(_str_arg(t, "startswith")),
    "abs": lambda x: abs(_num(x, "abs")),
    "min": lambda a, b: min(_num(a, "min"), _num(b, "min")),
    "max": lambda a, b: max(_num(a, "max"), _num(b, "max")),
    "str": lambda x: ("true" if x else "false") if isinstance(x, bool) else str(x),
    "int": lambda x: int(_num(x, "int")),
    "float": lambda x: float(_num(x, "float")),
}


class Interpreter:
    """Tree-walking evaluator with node interception."""

    def __init__(self, program: Program, table: Optional[NodeTable] = None,
                 step_budget: int = STEP_BUDGET):
        self.program = program
        self.table = table or NodeTable(program)
        self.step_budget = step_budget
        self.functions = {f.name: f for f in program.functions}
        self.global_names = {g.name for g in program.globals}

    def run(self, test: TestInput, mutation: Optional[MutationSpec] = None,
            record_events: bool = False) -> RunResult:
        n = len(self.table)
        self._traj = [[] for _ in range(n + 1)]
        self._out = []
        self._tokens = list(test.tokens)
        self._cursor = 0
        self._steps = 0
        self._depth = 0
        self._lines = set()
        self._events = [] if record_events else None
        self._mut_target = mutation.target if mutation else 0
        self._mut_value = mutation.value if mutation else None
        self._mut_negate = bool(mutation and mutation.negate)
        self._globals = {}
        status, err, returned = OK, None, None
        try:
            for g in self.program.globals:
                self._tick(g.pos.line)
                value = self._eval(g.value, self._globals)
                self._globals[g.name] = self._hit(self.table.site(g, "lhs"), value)
            returned = self._call(self.functions[self.program.entry], [])
        except _Timeout:
            status, err = TIMEOUT, f"step budget of {self.step_budget} exceeded"
        except MiniRuntimeError as e:
            status, err = RUNTIME_ERROR, str(e)
        except RecursionError:
            status, err = RUNTIME_ERROR, "interpreter recursion limit"
        out_idx = self.table.output_index
        if out_idx is not None:
            self._traj[out_idx] = list(self._out)
        return RunResult(self._traj, self._out, status, returned, err, self._steps,
                         self._lines, self._events)

    # -- interception -------------------------------------------------------
    def _hit(self, index, value):
        if index == self._mut_target:
            value = (not value) if self._mut_negate else self._mut_value
        self._traj[index].append(value)
        if self._events is not None:
            self._events.append(index)
        return value

    def _tick(self, line):
        self._steps += 1
        self._lines.add(line)
        if self._steps > self.step_budget:
            raise _Timeout()

    # -- statements ---------------------------------------------------------
    def _call(self, fn: FunctionDef, args):
        if len(args) != len(fn.params):
            raise MiniRuntimeError(f"{fn.name} expects {len(fn.params)} arguments, got {len(args)}")
        self._depth += 1
        if self._depth > MAX_CALL_DEPTH:
            raise MiniRuntimeError("call depth limit exceeded")
        self._tick(fn.pos.line)
        env = {}
        for p, a in zip(fn.params, args):
            env[p] = self._hit(self.table.site(fn, ("param", p)), a)
        try:
            self._exec_block(fn.body, env)
            value = None
        except _ReturnSignal as r:
            value = r.value
        self._depth -= 1
        return value

    def _exec_block(self, stmts, env):
        for s in stmts:
            self._exec(s, env)

    def _assign(self, name, value, env):
        if name in self.global_names and name not in env:
            self._globals[name] = value
        else:
            env[name] = value

    def _exec(self, s, env):
        self._tick(s.pos.line)
        table = self.table
        if isinstance(s, Assign):
            value = self._eval(s.value, env)
            self._assign(s.name, self._hit(table.site(s, "lhs"), value), env)
        elif isinstance(s, If):
            cond = self._hit(table.site(s, "pred"), _truthy(self._eval(s.cond, env)))
            self._exec_block(s.then if _truthy(cond) else s.orelse, env)
        elif isinstance(s, While):
            cond = self._hit(table.site(s, "pred"), _truthy(self._eval(s.cond, env)))
            back = table.site(s, "pred-back")
            while _truthy(cond):
                self._exec_block(s.body, env)
                self._tick(s.end_pos.line)
                cond = self._hit(back, _truthy(self._eval(s.cond, env, back=True)))
        elif isinstance(s, Return):
            value = None
            if s.value is not None:
                value = self._hit(table.site(s, "ret"), self._eval(s.value, env))
            raise _ReturnSignal(value)
        elif isinstance(s, Print):
            self._out.append(self._eval(s.value, env))
        elif isinstance(s, ExprStmt):
            self._eval(s.value, env)
        else:  # pragma: no cover
            raise TypeError(s)

    # -- expressions --------------------------------------------------------
    def _lookup(self, name, env):
        if name in env:
            return env[name]
        if name in self._globals:
            return self._globals[name]
        raise MiniRuntimeError(f"undefined variable {name!r}")

    def _eval(self, e, env, back=False):
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Var):
            return self._lookup(e.name, env)
        if isinstance(e, Binary):
            op = e.op
            if op == "&&":
                return _truthy(self._eval(e.left, env, back)) and _truthy(self._eval(e.right, env, back))
            if op == "||":
                return _truthy(self._eval(e.left, env, back)) or _truthy(self._eval(e.right, env, back))
            a = self._eval(e.left, env, back)
            b = self._eval(e.right, env, back)
            if op in ("+", "-", "*", "/", "%"):
                return _arith(op, a, b)
            return _compare(op, a, b)
        if isinstance(e, Unary):
            v = self._eval(e.operand, env, back)
            if e.op == "!":
                return not _truthy(v)
            return -_num(v, "-")
        if isinstance(e, Read):
            return self._read(e, env, back)
        if isinstance(e, Call):
            args = [self._eval(a, env, back) for a in e.args]
            fn = self.functions.get(e.name)
            if fn is not None:
                value = self._call(fn, args)
                return value
            builtin = BUILTINS.get(e.name)
            if builtin is None:
                raise MiniRuntimeError(f"unknown function {e.name!r}")
            try:
                return builtin(*args)
            except TypeError as exc:
                raise MiniRuntimeError(f"{e.name}: {exc}") from None
        raise TypeError(e)  # pragma: no cover

    def _read(self, e: Read, env, back):
        available = self._cursor < len(self._tokens)
        if e.target is None:
            if not available:
                raise MiniRuntimeError("input exhausted")
            tok = self._tokens[self._cursor]
            self._cursor += 1
            return tok
        tok = EOF
        if available:
            tok = self._tokens[self._cursor]
            self._cursor += 1
        site = self.table.site(e, "read-back" if back else "read")
        self._assign(e.target, self._hit(site, tok), env)
        return available


def run_oracle(program: Program, test: TestInput, table: Optional[NodeTable] = None,
               step_budget: int = STEP_BUDGET) -> RunResult:
    return Interpreter(program, table, step_budget).run(test, record_events=True)


def run_mutant(program: Program, test: TestInput, mutation: MutationSpec,
               table: Optional[NodeTable] = None, step_budget: int = STEP_BUDGET) -> RunResult:
    return Interpreter(program, table, step_budget).run(test, mutation)


# --------------------------------------------------------------------------
# Mutation sampling

_PURPOSE = {"values": 1}
STRING_LEN_MIN, STRING_LEN_MAX = 1, 64
_LETTERS = np.array(list("abcdefghijklmnopqrstuvwxyz"))


def node_rng(seed: int, node: int, purpose: str = "values") -> np.random.Generator:
    """Independent stream per (node, purpose) so adding nodes never shifts others."""
    return np.random.default_rng(np.random.SeedSequence([seed, node, _PURPOSE[purpose]]))


def infer_domain(node: Node, values) -> Optional[Domain]:
    if node.domain is not None:
        return node.domain
    for v in values:
        if isinstance(v, bool):
            return Domain("bool")
        if isinstance(v, int):
            return Domain("int")
        if isinstance(v, float):
            return Domain("float")
        if isinstance(v, str):
            return Domain("string")
    return None


def _mean_std(xs):
    arr = np.asarray(xs, dtype=float)
    std = float(arr.std())
    return float(arr.mean()), (std if std > 0 else 1.0)


def sample_mutations(node: Node, oracle_values, n: int, seed: int) -> list[MutationSpec]:
    """Mutation values for ``node``; the i-th draw does not depend on ``n``."""
    if n < 1:
        raise ValueError("number of mutations must be at least 1")
    dom = infer_domain(node, oracle_values)
    if dom is None:
        return []
    if dom.kind == "bool":
        return [MutationSpec(node.index, negate=True)]
    rng = node_rng(seed, node.index)
    if dom.kind == "bounded-int":
        seen = []
        for v in rng.integers(dom.lo, dom.hi, endpoint=True, size=n):
            if int(v) not in seen:
                seen.append(int(v))
        return [MutationSpec(node.index, v) for v in seen]
    if dom.kind in ("int", "float"):
        numeric = [v for v in oracle_values if isinstance(v, (int, float)) and not isinstance(v, bool)]
        if not numeric:
            raise ValueError(f"node {node.index}: Gaussian sampling needs observed values")
        mean, std = _mean_std(numeric)
        specs = []
        for _ in range(n):
            x = float(rng.normal(mean, std))
            specs.append(MutationSpec(node.index, int(round(x)) if dom.kind == "int" else x))
        return specs
    if dom.kind == "string":
        lengths = [len(v) for v in oracle_values if isinstance(v, str)]
        if not lengths:
            raise ValueError(f"node {node.index}: string sampling needs observed values")
        mean, std = _mean_std(lengths)
        specs = []
        for _ in range(n):
            length = int(round(float(rng.normal(mean, std))))
            length = min(max(length, STRING_LEN_MIN), STRING_LEN_MAX)
            letters = rng.integers(0, 26, size=length)
            specs.append(MutationSpec(node.index, "".join(_LETTERS[letters])))
        return specs
    raise ValueError(f"unknown domain {dom}")


# --------------------------------------------------------------------------
# Test suites
#
# One record per line:  <id>  in: <tokens...>  [out: <tokens...>]  [verdict: pass|fail]
# Tokens: integers, floats, true/false, "json strings", bare words (strings).
# @"text" expands to one string token per character.

_SUITE_TOKEN = re.compile(r'@"(?:[^"\\]|\\.)*"|"(?:[^"\\]|\\.)*"|\S+')
_INT = re.compile(r"[-+]?\d+$")
_FLOAT = re.compile(r"[-+]?(\d+\.\d*|\.\d+|\d+)([eE][-+]?\d+)?$")


def _parse_token(text):
    if text.startswith('@"'):
        return list(json.loads(text[1:]))
    if text.startswith('"'):
        return [json.loads(text)]
    if text in ("true", "false"):
        return [text == "true"]
    if _INT.match(text):
        return [int(text)]
    if _FLOAT.match(text):
        return [float(text)]
    return [text]


def _encode_scalar(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    return repr(v)


def parse_suite(text: str) -> list[TestInput]:
    tests = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = _SUITE_TOKEN.findall(line)
        tid, rest = parts[0], parts[1:]
        fields = {"in:": [], "out:": None, "verdict:": None}
        current = None
        for part in rest:
            if part in fields:
                current = part
                if part == "out:":
                    fields["out:"] = []
                continue
            if current is None:
                raise ValueError(f"suite line {lineno}: expected 'in:' before tokens")
            if current == "verdict:":
                fields["verdict:"] = part
            else:
                fields[current].extend(_parse_token(part))
        tests.append(TestInput(tid, fields["in:"], fields["out:"], fields["verdict:"]))
    ids = [t.id for t in tests]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate test ids in suite")
    return tests


def format_suite(tests) -> str:
    lines = []
    for t in tests:
        parts = [t.id, "in:"] + [_encode_scalar(v) for v in t.tokens]
        if t.expected is not None:
            parts += ["out:"] + [_encode_scalar(v) for v in t.expected]
        if t.verdict is not None:
            parts += ["verdict:", t.verdict]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def resolve_verdicts(program: Program, tests, table=None) -> dict:
    """Verdict per test: explicit if given, else oracle output vs expected output."""
    verdicts = {}
    for t in tests:
        if t.verdict is not None:
            verdicts[t.id] = t.verdict
        elif t.expected is not None:
            res = run_oracle(program, t, table)
            verdicts[t.id] = "pass" if _same_seq(res.observable(), t.expected) else "fail"
    return verdicts


# --------------------------------------------------------------------------
# Exact value comparison (floats bitwise)


def _fbits(x):
    return struct.pack("<d", x)


def _same_seq(a, b) -> bool:
    if a is b:
        return True
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if type(x) is not type(y):
            return False
        if type(x) is float:
            if _fbits(x) != _fbits(y):
                return False
        elif x != y:
            return False
    return True


def run_key(program_source: str, test: TestInput, mutation: Optional[MutationSpec], seed: int) -> str:
    payload = json.dumps({
        "program": program_source,
        "test": [test.id, [_encode_scalar(v) for v in test.tokens]],
        "mutation": mutation.key() if mutation else None,
        "seed": seed,
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()
