"""Assembler: directives, labels, branch offsets, error reporting."""

import struct

import pytest

from ervm.asm import AsmError, assemble
from ervm.isa import disassemble


def _image_words(image):
    return list(struct.unpack("<%dI" % (len(image) // 4), image))


def test_basic_program():
    prog = assemble("ADDI r1, r0, 5\nHALT\n")
    assert _image_words(prog.image) == [0x10100005, 0x00000000]


def test_self_jump_offset_minus_one():
    prog = assemble("loop: JAL r0, loop\n")
    word = _image_words(prog.image)[0]
    assert word == 0x4000FFFF  # offset -1 word


def test_backward_branch():
    prog = assemble("loop:\nADDI r1, r1, 1\nBNE r1, r2, loop\nHALT\n")
    words = _image_words(prog.image)
    assert words[1] & 0xFFFF == 0xFFFE  # -2 words back to loop


def test_forward_branch():
    prog = assemble("BEQ r1, r2, done\nADDI r3, r0, 1\ndone: HALT\n")
    words = _image_words(prog.image)
    assert words[0] & 0xFFFF == 1


def test_org_and_word_directives():
    prog = assemble(".org 0x10\n.word 0xDEADBEEF\n")
    assert len(prog.image) == 0x14
    assert _image_words(prog.image)[4] == 0xDEADBEEF


def test_ascii_directive():
    prog = assemble('.ascii "hi"\n')
    assert prog.image[:2] == b"hi"


def test_symbols_recorded():
    prog = assemble(".org 0x100\nentry: HALT\n")
    assert prog.symbols["entry"] == 0x100


def test_listing_maps_addresses():
    prog = assemble("ADDI r1, r0, 5\nHALT\n")
    assert prog.listing[0][1].strip().startswith("ADDI")


def test_unknown_mnemonic_reports_line():
    with pytest.raises(AsmError) as exc:
        assemble("HALT\nFROB r1\n")
    assert "2" in str(exc.value)


def test_unresolved_label():
    with pytest.raises(AsmError):
        assemble("JAL r0, nowhere\n")


def test_duplicate_label():
    with pytest.raises(AsmError):
        assemble("a: HALT\na: HALT\n")


def test_immediate_out_of_range():
    with pytest.raises(AsmError):
        assemble("ADDI r1, r0, 70000\n")


def test_negative_and_hex_immediates():
    prog = assemble("ADDI r1, r0, -1\nADDI r2, r0, 0xFF\n")
    words = _image_words(prog.image)
    assert words[0] & 0xFFFF == 0xFFFF
    assert words[1] & 0xFFFF == 0xFF


def test_csr_names():
    prog = assemble("CSRW IVEC, r1\nCSRR r2, EPC\n")
    words = _image_words(prog.image)
    assert words[0] & 0xFFFF == 1  # IVEC index
    assert words[1] & 0xFFFF == 2  # EPC index


def test_overlapping_org_rejected():
    with pytest.raises(AsmError):
        assemble(".org 0\n.word 1\n.word 2\n.org 4\n.word 3\n")


def test_disassemble_round_trip_on_kernel():
    """assemble(disassembled instructions) reproduces the instruction
    words for a nontrivial program."""
    src = """
    start:
        ADDI r1, r0, 10
    loop:
        ADDI r1, r1, -1
        BNE r1, r0, loop
        JAL r14, sub
        HALT
    sub:
        ADD r2, r1, r1
        JALR r0, r14, 0
    """
    prog = assemble(src)
    words = _image_words(prog.image)
    rebuilt = assemble("\n".join(disassemble(w) for w in words))
    assert _image_words(rebuilt.image) == words
