"""Two-pass assembler for the VM's instruction set.

Pass 1 walks the source collecting label addresses; pass 2 emits words.
Directives: `.org ADDR`, `.word VALUE|LABEL`, `.ascii "text"`. Branch and
jump targets may be labels; the assembler computes the relative word
offset from the following instruction.
"""

import re
from dataclasses import dataclass, field

from . import isa
from .isa import Instruction, encode

LABEL_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

CSR_BY_NAME = {name: idx for idx, name in isa.CSR_NAMES.items()}


class AsmError(ValueError):
    def __init__(self, lineno, message):
        super().__init__("line %d: %s" % (lineno, message))
        self.lineno = lineno


@dataclass
class AsmProgram:
    source: str
    symbols: dict
    image: bytes
    listing: dict = field(default_factory=dict)  # address -> (lineno, text)

    def nearest_symbol(self, addr):
        """Closest label at or below addr; for `where`-style reporting."""
        best = None
        for name, a in self.symbols.items():
            if a <= addr and (best is None or a > best[1]):
                best = (name, a)
        return best


def _parse_int(tok, lineno):
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(lineno, "bad number %r" % tok) from None


def _parse_reg(tok, lineno):
    if len(tok) >= 2 and tok[0] in "rR" and tok[1:].isdigit():
        n = int(tok[1:])
        if 0 <= n <= 15:
            return n
    raise AsmError(lineno, "bad register %r" % tok)


def _split_operands(rest):
    return [t for t in re.split(r"[,\s]+", rest.strip()) if t]


@dataclass
class _Line:
    lineno: int
    text: str
    addr: int
    kind: str       # "instr" | "word" | "ascii"
    mnemonic: str = ""
    operands: list = field(default_factory=list)
    data: bytes = b""


def _tokenize(source):
    """Pass 1: labels, addresses, raw statement list."""
    loc = 0
    symbols = {}
    stmts = []
    for lineno, raw in enumerate(source.splitlines(), 1):
        line = raw.split(";", 1)[0].split("#", 1)[0].rstrip()
        text = line.strip()
        while text:
            m = re.match(r"^([A-Za-z_][A-Za-z0-9_]*):\s*", text)
            if not m:
                break
            label = m.group(1)
            if label in symbols:
                raise AsmError(lineno, "duplicate label %r" % label)
            symbols[label] = loc
            text = text[m.end():]
        if not text:
            continue
        parts = text.split(None, 1)
        op = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        if op == ".org":
            loc = _parse_int(rest.strip(), lineno)
            continue
        if op == ".word":
            stmts.append(_Line(lineno, text, loc, "word",
                               operands=_split_operands(rest)))
            loc += 4 * max(1, len(_split_operands(rest)))
            continue
        if op == ".ascii":
            m = re.match(r'^"((?:[^"\\]|\\.)*)"$', rest.strip())
            if not m:
                raise AsmError(lineno, ".ascii needs a quoted string")
            data = m.group(1).encode().decode("unicode_escape").encode("latin-1")
            stmts.append(_Line(lineno, text, loc, "ascii", data=data))
            loc += len(data)
            continue
        if op.startswith("."):
            raise AsmError(lineno, "unknown directive %r" % op)
        mnemonic = op.upper()
        if mnemonic not in isa.OPCODES_BY_NAME:
            raise AsmError(lineno, "unknown mnemonic %r" % op)
        if loc % 4:
            raise AsmError(lineno, "instruction at unaligned address 0x%X" % loc)
        stmts.append(_Line(lineno, text, loc, "instr", mnemonic=mnemonic,
                           operands=_split_operands(rest)))
        loc += 4
    return symbols, stmts


def _imm(tok, symbols, lineno):
    if LABEL_RE.match(tok):
        if tok in symbols:
            return symbols[tok]
        raise AsmError(lineno, "unresolved label %r" % tok)
    return _parse_int(tok, lineno)


def _check_simm(v, lineno):
    if not -0x8000 <= v <= 0x7FFF:
        raise AsmError(lineno, "immediate %d out of signed 16-bit range" % v)
    return v & 0xFFFF


def _branch_offset(tok, symbols, stmt):
    """Label -> word offset relative to the next instruction; bare numbers
    are taken as the offset itself."""
    if LABEL_RE.match(tok):
        if tok not in symbols:
            raise AsmError(stmt.lineno, "unresolved label %r" % tok)
        delta = symbols[tok] - (stmt.addr + 4)
        if delta % 4:
            raise AsmError(stmt.lineno, "branch target %r not word-aligned" % tok)
        off = delta // 4
    else:
        off = _parse_int(tok, stmt.lineno)
    return _check_simm(off, stmt.lineno)


def _assemble_instr(stmt, symbols):
    lineno, ops, name = stmt.lineno, stmt.operands, stmt.mnemonic
    opcode = isa.OPCODES_BY_NAME[name]

    def need(n):
        if len(ops) != n:
            raise AsmError(lineno, "%s takes %d operand(s), got %d" % (name, n, len(ops)))

    if opcode in (isa.OP_HALT, isa.OP_ECALL, isa.OP_ERET):
        need(0)
        return Instruction(opcode)
    if opcode in isa.R_TYPE:
        need(3)
        return Instruction(opcode, _parse_reg(ops[0], lineno),
                           _parse_reg(ops[1], lineno), _parse_reg(ops[2], lineno))
    if opcode == isa.OP_LUI:
        need(2)
        v = _imm(ops[1], symbols, lineno)
        if not 0 <= v <= 0xFFFF:
            raise AsmError(lineno, "LUI immediate out of 16-bit range")
        return Instruction(opcode, rd=_parse_reg(ops[0], lineno), imm16=v)
    if opcode in (isa.OP_ADDI, isa.OP_LD, isa.OP_ST, isa.OP_JALR):
        need(3)
        v = _imm(ops[2], symbols, lineno)
        # accept the raw bit pattern for 0x8000..0xFFFF as well as signed
        if not -0x8000 <= v <= 0xFFFF:
            raise AsmError(lineno, "immediate %d out of 16-bit range" % v)
        return Instruction(opcode, rd=_parse_reg(ops[0], lineno),
                           rs1=_parse_reg(ops[1], lineno), imm16=v & 0xFFFF)
    if opcode in isa.BRANCHES:
        need(3)
        # operand regs land in the rd/rs1 encoding slots
        return Instruction(opcode, rd=_parse_reg(ops[0], lineno),
                           rs1=_parse_reg(ops[1], lineno),
                           imm16=_branch_offset(ops[2], symbols, stmt))
    if opcode == isa.OP_JAL:
        need(2)
        return Instruction(opcode, rd=_parse_reg(ops[0], lineno),
                           imm16=_branch_offset(ops[1], symbols, stmt))
    if opcode == isa.OP_CSRR:
        need(2)
        return Instruction(opcode, rd=_parse_reg(ops[0], lineno),
                           imm16=_csr_index(ops[1], lineno))
    if opcode == isa.OP_CSRW:
        need(2)
        return Instruction(opcode, rs1=_parse_reg(ops[1], lineno),
                           imm16=_csr_index(ops[0], lineno))
    raise AsmError(lineno, "unhandled mnemonic %s" % name)


def _csr_index(tok, lineno):
    idx = CSR_BY_NAME.get(tok.upper())
    if idx is None:
        idx = _parse_int(tok, lineno)
    if not 0 <= idx < isa.NUM_CSRS:
        raise AsmError(lineno, "bad CSR %r" % tok)
    return idx


def assemble(source):
    symbols, stmts = _tokenize(source)
    chunks = {}   # addr -> bytes
    listing = {}

    def emit(addr, data, lineno):
        for a in range(addr, addr + len(data), 4):
            if a in chunks:
                raise AsmError(lineno, "overlapping emission at 0x%X" % a)
        chunks[addr] = data

    for stmt in stmts:
        if stmt.kind == "instr":
            word = encode(_assemble_instr(stmt, symbols))
            emit(stmt.addr, word.to_bytes(4, "little"), stmt.lineno)
            listing[stmt.addr] = (stmt.lineno, stmt.text)
        elif stmt.kind == "word":
            addr = stmt.addr
            for tok in stmt.operands or ["0"]:
                v = _imm(tok, symbols, stmt.lineno) & 0xFFFFFFFF
                emit(addr, v.to_bytes(4, "little"), stmt.lineno)
                listing[addr] = (stmt.lineno, stmt.text)
                addr += 4
        else:  # ascii
            emit(stmt.addr, stmt.data, stmt.lineno)
            listing[stmt.addr] = (stmt.lineno, stmt.text)

    size = max((a + len(d) for a, d in chunks.items()), default=0)
    image = bytearray(size)
    for addr, data in chunks.items():
        image[addr:addr + len(data)] = data
    return AsmProgram(source=source, symbols=symbols, image=bytes(image),
                      listing=listing)
