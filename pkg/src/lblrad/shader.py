"""A tiny fragment-program language and its interpreter.

Programs are written in an ARB-like assembly::

    TEX a, x_input;          # load binding ``x_input`` into register a
    MUL t, a, b;
    MAD r, a, b, -t;         # '-' negates a source operand
    EX2 e.x, t.x;            # component-wise special function
    SUB d, d, {1, 1, 1, 1};  # literal vector
    OUT r;                   # mark r as a program result

Registers hold one value per element.  Elements are packed four per pixel,
so component ``x`` of a register is every element with ``index % 4 == 0``,
``y`` is ``index % 4 == 1`` and so on.  A source with a component selector
and no destination mask broadcasts that component over the pixel.

Arithmetic is delegated to an *arithmetic backend*: :class:`ModelArith`
runs the bit-level operators of :mod:`lblrad.fpmodel`, :class:`NativeArith`
runs numpy ``float32`` (IEEE binary32, round-to-nearest-even).  For
profiles with a ``dependent_unit`` the interpreter issues an ALU
instruction on the second unit when it reads the destination of the ALU
instruction issued just before it on the first unit.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import fpmodel as fp

__all__ = [
    "Operand",
    "Instruction",
    "Program",
    "ProgramError",
    "assemble",
    "ModelArith",
    "NativeArith",
    "execute",
]

COMPONENTS = "xyzw"
ALU_ARITY = {"MOV": 1, "ADD": 2, "SUB": 2, "MUL": 2, "MAD": 3, "EX2": 1, "RCP": 1}
OPCODES = set(ALU_ARITY) | {"TEX", "OUT"}


class ProgramError(ValueError):
    """Raised for malformed programs, before anything is executed."""


@dataclass(frozen=True)
class Operand:
    name: str | None = None
    negate: bool = False
    component: str | None = None
    literal: tuple[float, ...] | None = None

    def __str__(self) -> str:
        if self.literal is not None:
            body = "{" + ", ".join(repr(v) for v in self.literal) + "}"
        else:
            body = self.name + (f".{self.component}" if self.component else "")
        return ("-" if self.negate else "") + body


@dataclass(frozen=True)
class Instruction:
    op: str
    dst: str | None
    srcs: tuple[Operand, ...] = ()
    dst_component: str | None = None
    line: int = 0

    @property
    def is_alu(self) -> bool:
        return self.op in ALU_ARITY

    def __str__(self) -> str:
        if self.op == "OUT":
            return f"OUT {self.dst};"
        d = self.dst + (f".{self.dst_component}" if self.dst_component else "")
        return f"{self.op} {', '.join([d] + [str(s) for s in self.srcs])};"


@dataclass(frozen=True)
class Program:
    instructions: tuple[Instruction, ...]
    outputs: tuple[str, ...] = field(default=())

    @property
    def bindings(self) -> tuple[str, ...]:
        return tuple(i.srcs[0].name for i in self.instructions if i.op == "TEX")

    def uniforms(self) -> set[str]:
        """Names read before being written: scalar uniforms of the program."""
        written: set[str] = set()
        needed: set[str] = set()
        for ins in self.instructions:
            if ins.op == "TEX":
                written.add(ins.dst)
                continue
            if ins.op == "OUT":
                continue
            for s in ins.srcs:
                if s.name is not None and s.name not in written:
                    needed.add(s.name)
            written.add(ins.dst)
        return needed

    def opcode_counts(self) -> Counter:
        return Counter(i.op for i in self.instructions)

    def text(self) -> str:
        return "\n".join(str(i) for i in self.instructions) + "\n"


_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_SRC_RE = re.compile(rf"^(-)?\s*(?:({_IDENT})(?:\.([xyzw]))?|\{{([^}}]*)\}})$")
_DST_RE = re.compile(rf"^({_IDENT})(?:\.([xyzw]))?$")


def _split_operands(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if cur and "".join(cur).strip():
        parts.append("".join(cur).strip())
    return parts


def assemble(source: str) -> Program:
    """Parse program text into a validated :class:`Program`."""
    instrs: list[Instruction] = []
    outputs: list[str] = []
    for lineno, raw in enumerate(source.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("!!") or line in ("END", "..."):
            continue
        if not line.endswith(";"):
            raise ProgramError(f"line {lineno}: missing ';'")
        line = line[:-1].strip()
        op, _, rest = line.partition(" ")
        op = op.upper()
        if op not in OPCODES:
            raise ProgramError(f"line {lineno}: unknown opcode {op!r}")
        ops = _split_operands(rest)
        if not ops:
            raise ProgramError(f"line {lineno}: {op} needs operands")
        m = _DST_RE.match(ops[0])
        if not m:
            raise ProgramError(f"line {lineno}: bad destination {ops[0]!r}")
        dst, dcomp = m.group(1), m.group(2)
        if op == "OUT":
            if len(ops) != 1 or dcomp:
                raise ProgramError(f"line {lineno}: OUT takes one register")
            instrs.append(Instruction("OUT", dst, (), None, lineno))
            outputs.append(dst)
            continue
        srcs = []
        for tok in ops[1:]:
            sm = _SRC_RE.match(tok)
            if not sm:
                raise ProgramError(f"line {lineno}: bad operand {tok!r}")
            neg, name, comp, lit = sm.groups()
            if lit is not None:
                try:
                    vals = tuple(float(v) for v in lit.split(","))
                except ValueError:
                    raise ProgramError(f"line {lineno}: bad literal {tok!r}") from None
                if len(vals) not in (1, 4):
                    raise ProgramError(f"line {lineno}: literal needs 1 or 4 values")
                srcs.append(Operand(None, bool(neg), None, vals))
            else:
                srcs.append(Operand(name, bool(neg), comp, None))
        if op == "TEX":
            if len(srcs) != 1 or srcs[0].literal is not None or srcs[0].negate:
                raise ProgramError(f"line {lineno}: TEX takes one binding name")
        elif len(srcs) != ALU_ARITY[op]:
            raise ProgramError(
                f"line {lineno}: {op} takes {ALU_ARITY[op]} sources, got {len(srcs)}"
            )
        instrs.append(Instruction(op, dst, tuple(srcs), dcomp, lineno))
    prog = Program(tuple(instrs), tuple(outputs))
    validate(prog)
    return prog


def validate(prog: Program) -> None:
    written: set[str] = set()
    for ins in prog.instructions:
        if ins.op not in OPCODES:
            raise ProgramError(f"unknown opcode {ins.op!r}")
        if ins.op == "OUT":
            if ins.dst not in written:
                raise ProgramError(f"OUT of unwritten register {ins.dst!r}")
            continue
        if ins.op != "TEX" and len(ins.srcs) != ALU_ARITY[ins.op]:
            raise ProgramError(f"{ins.op} has wrong arity")
        if ins.dst_component is not None and ins.dst_component not in COMPONENTS:
            raise ProgramError(f"bad write mask {ins.dst_component!r}")
        written.add(ins.dst)
    if not prog.outputs:
        raise ProgramError("program has no OUT")


# --------------------------------------------------------------------------
# arithmetic backends


class ModelArith:
    """Bit-level arithmetic of a :class:`~lblrad.fpmodel.UnitProfile`."""

    def __init__(self, profile: fp.UnitProfile):
        self.profile = profile
        self.format = profile.format
        self.dual = profile.dependent_unit is not None

    def load(self, x) -> np.ndarray:
        return fp.quantize(np.atleast_1d(np.asarray(x, dtype=np.float64)), self.profile)

    def loadbits(self, bits) -> np.ndarray:
        return np.atleast_1d(np.asarray(bits, dtype=np.uint64))

    def zeros(self, n: int) -> np.ndarray:
        return np.zeros(n, dtype=np.uint64)

    def neg(self, a):
        return a ^ np.uint64(self.format.sign_mask)

    def add(self, a, b, slot=0):
        return fp.fadd(a, b, self.profile.unit(slot))

    def sub(self, a, b, slot=0):
        return fp.fsub(a, b, self.profile.unit(slot))

    def mul(self, a, b, slot=0):
        return fp.fmul(a, b, self.profile.unit(slot))

    def mad(self, a, b, c, slot=0):
        return fp.fmad(a, b, c, self.profile.unit(slot))

    def ex2(self, a, slot=0):
        return fp.ex2(a, self.profile.unit(slot))

    def rcp(self, a, slot=0):
        return fp.rcp(a, self.profile.unit(slot))

    def to_float(self, a) -> np.ndarray:
        return fp.to_float(a, self.format)

    def bits(self, a) -> np.ndarray:
        return np.asarray(a, dtype=np.uint64)


class NativeArith:
    """numpy binary32 arithmetic (round-to-nearest-even, gradual underflow)."""

    format = fp.IEEE_BINARY32
    dual = False

    def load(self, x) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            return np.atleast_1d(np.asarray(x, dtype=np.float64)).astype(np.float32)

    def loadbits(self, bits) -> np.ndarray:
        return np.atleast_1d(np.asarray(bits, dtype=np.uint64)).astype(np.uint32).view(np.float32)

    def zeros(self, n: int) -> np.ndarray:
        return np.zeros(n, dtype=np.float32)

    def neg(self, a):
        return -a

    def add(self, a, b, slot=0):
        with np.errstate(all="ignore"):
            return np.add(a, b, dtype=np.float32)

    def sub(self, a, b, slot=0):
        with np.errstate(all="ignore"):
            return np.subtract(a, b, dtype=np.float32)

    def mul(self, a, b, slot=0):
        with np.errstate(all="ignore"):
            return np.multiply(a, b, dtype=np.float32)

    def mad(self, a, b, c, slot=0):
        with np.errstate(all="ignore"):
            return np.add(np.multiply(a, b, dtype=np.float32), c, dtype=np.float32)

    def ex2(self, a, slot=0):
        # correctly rounded through binary64
        with np.errstate(all="ignore"):
            return np.exp2(a.astype(np.float64)).astype(np.float32)

    def rcp(self, a, slot=0):
        with np.errstate(all="ignore"):
            return (1.0 / a.astype(np.float64)).astype(np.float32)

    def to_float(self, a) -> np.ndarray:
        return np.asarray(a, dtype=np.float32).astype(np.float64)

    def bits(self, a) -> np.ndarray:
        return np.asarray(a, dtype=np.float32).view(np.uint32).astype(np.uint64)


# --------------------------------------------------------------------------
# interpreter


@dataclass
class ExecutionResult:
    outputs: dict[str, np.ndarray]
    registers: dict[str, np.ndarray]
    counts: Counter
    slots: list[int]


def _select(val: np.ndarray, comp: str | None, n: int, rows: np.ndarray | None):
    """Values of an operand at the destination elements ``rows`` (all if None)."""
    if val.shape[0] == 1:
        return val if rows is None else val
    if comp is None:
        return val if rows is None else val[rows]
    c = COMPONENTS.index(comp)
    idx = np.arange(n) if rows is None else rows
    return val[(idx // 4) * 4 + c]


def execute(
    prog: Program,
    bindings: dict[str, object],
    uniforms: dict[str, float],
    arith,
    n: int,
) -> ExecutionResult:
    """Run ``prog`` over ``n`` elements.

    ``bindings`` maps TEX binding names to length-``n`` binary64 arrays (or
    scalars); ``uniforms`` maps free register names to scalars.  Both are
    loaded into the arithmetic format before use.
    """
    missing = set(prog.bindings) - set(bindings)
    if missing:
        raise ProgramError(f"missing bindings: {sorted(missing)}")
    missing = prog.uniforms() - set(uniforms)
    if missing:
        raise ProgramError(f"missing uniforms: {sorted(missing)}")
    if any(i.dst_component or any(s.component for s in i.srcs) for i in prog.instructions):
        if n % 4:
            raise ProgramError("component addressing needs a multiple of 4 elements")

    regs: dict[str, np.ndarray] = {k: arith.load(v) for k, v in uniforms.items()}
    counts: Counter = Counter()
    slots: list[int] = []
    prev_dst: str | None = None
    prev_slot = 1
    lit_cache: dict[tuple, np.ndarray] = {}

    def value_of(s: Operand, rows):
        if s.literal is not None:
            key = s.literal
            if key not in lit_cache:
                if len(set(key)) == 1:
                    lit = np.array(key[:1])
                else:
                    lit = np.tile(np.array(key), n // 4)
                lit_cache[key] = arith.load(lit)
            v = lit_cache[key]
        else:
            v = regs[s.name]
        v = _select(v, s.component, n, rows)
        return arith.neg(v) if s.negate else v

    for ins in prog.instructions:
        counts[ins.op] += 1
        if ins.op == "OUT":
            continue
        if ins.op == "TEX":
            v = arith.load(bindings[ins.srcs[0].name])
            if v.shape[0] not in (1, n):
                raise ProgramError(f"binding {ins.srcs[0].name!r} has wrong length")
            regs[ins.dst] = v
            prev_dst = None
            continue

        slot = 0
        if arith.dual and prev_slot == 0 and prev_dst is not None:
            if any(s.name == prev_dst for s in ins.srcs):
                slot = 1
        slots.append(slot)
        prev_slot, prev_dst = slot, ins.dst

        rows = None
        if ins.dst_component is not None:
            rows = np.arange(COMPONENTS.index(ins.dst_component), n, 4)
        srcs = [value_of(s, rows) for s in ins.srcs]
        op = ins.op
        if op == "MOV":
            res = srcs[0]
        elif op == "ADD":
            res = arith.add(srcs[0], srcs[1], slot)
        elif op == "SUB":
            res = arith.sub(srcs[0], srcs[1], slot)
        elif op == "MUL":
            res = arith.mul(srcs[0], srcs[1], slot)
        elif op == "MAD":
            res = arith.mad(srcs[0], srcs[1], srcs[2], slot)
        elif op == "EX2":
            res = arith.ex2(srcs[0], slot)
        else:
            res = arith.rcp(srcs[0], slot)

        if rows is None:
            regs[ins.dst] = res
        else:
            cur = regs.get(ins.dst)
            if cur is None or cur.shape[0] != n:
                full = arith.zeros(n)
                if cur is not None:
                    full[:] = cur
                cur = full
            else:
                cur = cur.copy()
            cur[rows] = res if res.shape[0] == rows.shape[0] else res[0]
            regs[ins.dst] = cur

    outputs = {}
    for name in prog.outputs:
        v = regs[name]
        outputs[name] = np.broadcast_to(v, (n,)).copy() if v.shape[0] == 1 else v
    return ExecutionResult(outputs, regs, counts, slots)
