"""Intel-syntax tokenizer, parser, and canonical printer for basic blocks.

One instruction per line, comments after ';' stripped. Canonical rendering is
lowercase with single-space token separation and is the cache key used by the
cost-model layer, so it must be a pure function of the parsed structure.
"""

import re
from dataclasses import dataclass, field

from . import kb as kbmod
from .errors import AsmParseError

_PTR_WIDTHS = {"byte": 8, "word": 16, "dword": 32, "qword": 64, "xmmword": 128}
_WIDTH_PTRS = {w: p for p, w in _PTR_WIDTHS.items()}

_TOKEN_RE = re.compile(r"\s*([a-z_][a-z0-9_]*|0x[0-9a-f]+|\d+|[\[\]+\-*,])", re.IGNORECASE)


@dataclass(frozen=True)
class Register:
    name: str
    kind: str = field(default="register", init=False, compare=False)


@dataclass(frozen=True)
class Memory:
    base: str | None
    index: str | None
    scale: int
    displacement: int
    width_bits: int
    kind: str = field(default="memory", init=False, compare=False)

    def __post_init__(self):
        if self.base is None and self.index is None and self.displacement == 0:
            raise AsmParseError("memory operand needs a base, index, or displacement")

    def key(self) -> str:
        """Normalized address expression; identical keys alias."""
        parts = []
        if self.base:
            parts.append(self.base)
        if self.index:
            parts.append(f"{self.index}*{self.scale}" if self.scale != 1 else self.index)
        expr = "+".join(parts)
        if self.displacement or not parts:
            expr += f"{self.displacement:+d}" if parts else f"{self.displacement:d}"
        return f"[{expr}]"


@dataclass(frozen=True)
class Immediate:
    value: int
    width_bits: int
    kind: str = field(default="immediate", init=False, compare=False)


@dataclass(frozen=True)
class Instruction:
    mnemonic: str
    operands: tuple
    source_text: str = field(default="", compare=False)
    slots: tuple = field(default=(), compare=False)  # matched KB form


@dataclass(frozen=True)
class BasicBlock:
    instructions: tuple

    def __len__(self):
        return len(self.instructions)


class _Lexer:
    def __init__(self, text: str, line_no: int):
        self.text = text
        self.line_no = line_no
        self.pos = 0
        self.tokens = []
        while self.pos < len(text):
            rest = text[self.pos:]
            if rest.strip() == "":
                break
            m = _TOKEN_RE.match(text, self.pos)
            if not m:
                raise AsmParseError(f"unexpected character {text[self.pos]!r}",
                                    line_no, self.pos + 1)
            self.tokens.append((m.group(1).lower(), m.start(1)))
            self.pos = m.end()
        self.idx = 0

    def peek(self):
        return self.tokens[self.idx][0] if self.idx < len(self.tokens) else None

    def next(self):
        if self.idx >= len(self.tokens):
            raise AsmParseError("unexpected end of line", self.line_no, len(self.text))
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok[0]

    def expect(self, tok: str):
        got = self.next()
        if got != tok:
            raise AsmParseError(f"expected {tok!r}, got {got!r}", self.line_no)

    def done(self) -> bool:
        return self.idx >= len(self.tokens)


def _parse_int(tok: str) -> int:
    return int(tok, 16) if tok.startswith("0x") else int(tok)


def _parse_memory(lex: _Lexer, width: int | None, kb) -> Memory:
    lex.expect("[")
    base = index = None
    scale = 1
    disp = 0
    sign = 1
    first = True
    while True:
        tok = lex.next()
        if tok == "]":
            break
        if tok == "+":
            sign = 1
            continue
        if tok == "-":
            sign = -1
            continue
        if not first and sign == 0:
            raise AsmParseError("missing '+' or '-' in address expression", lex.line_no)
        if tok in kb.registers:
            if sign == -1:
                raise AsmParseError("registers cannot be subtracted in an address",
                                    lex.line_no)
            reg = tok
            if lex.peek() == "*":
                lex.next()
                scale_tok = lex.next()
                s = _parse_int(scale_tok)
                if s not in (1, 2, 4, 8):
                    raise AsmParseError(f"bad scale {s}", lex.line_no)
                if index is not None:
                    raise AsmParseError("two index registers", lex.line_no)
                index, scale = reg, s
            elif base is None:
                base = reg
            elif index is None:
                index = reg
            else:
                raise AsmParseError("too many registers in address", lex.line_no)
        elif tok.startswith("0x") or tok.isdigit():
            disp += sign * _parse_int(tok)
        else:
            raise AsmParseError(f"bad address token {tok!r}", lex.line_no)
        sign = 0
        first = False
    return Memory(base=base, index=index, scale=scale, displacement=disp,
                  width_bits=width if width is not None else 0)


def _parse_operand(lex: _Lexer, kb):
    tok = lex.peek()
    if tok in _PTR_WIDTHS:
        lex.next()
        lex.expect("ptr")
        return _parse_memory(lex, _PTR_WIDTHS[tok], kb)
    if tok == "[":
        return _parse_memory(lex, None, kb)
    tok = lex.next()
    if tok in kb.registers:
        return Register(tok)
    if tok == "-":
        val = -_parse_int(lex.next())
        return Immediate(val, 0)
    if tok.startswith("0x") or tok.lstrip("-").isdigit():
        return Immediate(_parse_int(tok), 0)
    raise AsmParseError(f"unknown operand token {tok!r}", lex.line_no)


def _resolve_widths(operands, line_no, kb):
    """Fill memory/immediate widths left open by the syntax.

    An operand without an explicit width takes the register width of the other
    operand; if none exists the line is ambiguous and rejected.
    """
    inferred = None
    for op in operands:
        if op.kind == "register":
            inferred = kb.registers[op.name].width_bits
            break
        if op.kind == "memory" and op.width_bits:
            inferred = op.width_bits
            # keep looking: an explicit register width wins for immediates
    resolved = []
    for op in operands:
        if op.kind == "memory" and op.width_bits == 0:
            if inferred is None:
                raise AsmParseError("memory operand width is ambiguous; add a "
                                    "'byte/word/dword/qword ptr' prefix", line_no)
            op = Memory(op.base, op.index, op.scale, op.displacement, inferred)
        elif op.kind == "immediate" and op.width_bits == 0:
            if inferred is None:
                raise AsmParseError("immediate width is ambiguous", line_no)
            op = Immediate(op.value, inferred)
        resolved.append(op)
    return tuple(resolved)


def parse_instruction(line: str, kb, line_no: int = 1) -> Instruction:
    lex = _Lexer(line, line_no)
    if lex.done():
        raise AsmParseError("empty instruction", line_no)
    mnemonic = lex.next()
    if not re.fullmatch(r"[a-z][a-z0-9]*", mnemonic):
        raise AsmParseError(f"bad mnemonic {mnemonic!r}", line_no, 1)
    spec = kb.opcodes.get(mnemonic)
    if spec is None:
        raise AsmParseError(f"unknown mnemonic {mnemonic!r}", line_no, 1)

    operands = []
    while not lex.done():
        operands.append(_parse_operand(lex, kb))
        if not lex.done():
            lex.expect(",")
            if lex.done():
                raise AsmParseError("trailing comma", line_no)
    operands = _resolve_widths(operands, line_no, kb)

    instr = Instruction(mnemonic=mnemonic, operands=operands, source_text=line.strip())
    if not spec.bb_valid:
        raise AsmParseError(f"mnemonic {mnemonic!r} is not allowed inside a basic block",
                            line_no)
    sig = kbmod.instruction_signature(kb, instr)
    form = kbmod.matching_form(kb, mnemonic, sig) if sig else None
    if form is None:
        raise AsmParseError(f"invalid operand combination for {mnemonic!r}", line_no)
    return Instruction(mnemonic=mnemonic, operands=operands,
                       source_text=line.strip(), slots=form)


def parse_block(text: str, kb) -> BasicBlock:
    """Parse a multi-line block; every instruction must validate against `kb`."""
    if not text or not text.strip():
        raise AsmParseError("empty block")
    instructions = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0]
        if not line.strip():
            continue
        instructions.append(parse_instruction(line, kb, line_no))
    if not instructions:
        raise AsmParseError("empty block")
    return BasicBlock(tuple(instructions))


def _render_operand(op, slot) -> str:
    if op.kind == "register":
        return op.name
    if op.kind == "immediate":
        return str(op.value)
    # memory: agen operands carry no size prefix (no memory is accessed)
    parts = []
    if op.base:
        parts.append(op.base)
    if op.index:
        parts.append(f"{op.index}*{op.scale}" if op.scale != 1 else op.index)
    expr = " + ".join(parts)
    if op.displacement or not parts:
        if parts:
            expr += (" + " if op.displacement >= 0 else " - ") + str(abs(op.displacement))
        else:
            expr = str(op.displacement)
    body = f"[{expr}]"
    if slot is not None and slot.kind == "agen":
        return body
    return f"{_WIDTH_PTRS[op.width_bits]} ptr {body}"


def render_instruction(instr: Instruction) -> str:
    slots = instr.slots if instr.slots else (None,) * len(instr.operands)
    ops = ", ".join(_render_operand(op, slot) for op, slot in zip(instr.operands, slots))
    return f"{instr.mnemonic} {ops}" if ops else instr.mnemonic


def render_block(bb: BasicBlock) -> str:
    """Canonical text: one instruction per line, trailing newline."""
    return "".join(render_instruction(i) + "\n" for i in bb.instructions)
