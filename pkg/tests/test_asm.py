import pytest

from comet.asm import (Immediate, Memory, Register, parse_block, parse_instruction,
                       render_block)
from comet.errors import AsmParseError
from comet.perturb import PerturbConfig, make_plan, sample_from_plan
from comet import graph, rng as rngmod
from .conftest import B1_TEXT, B2_TEXT, CS1_TEXT, CS2_TEXT


def test_parse_lea_listing_line(core):
    instr = parse_instruction("lea rdx, [rax + 1]", core)
    assert instr.mnemonic == "lea"
    assert instr.operands[0] == Register("rdx")
    mem = instr.operands[1]
    assert (mem.base, mem.index, mem.displacement) == ("rax", None, 1)
    assert instr.slots[1].kind == "agen"


def test_parse_byte_ptr_store(core):
    instr = parse_instruction("mov byte ptr [rax], 80", core)
    mem, imm = instr.operands
    assert isinstance(mem, Memory) and mem.width_bits == 8
    assert imm == Immediate(80, 8)


def test_parse_rejects_control_flow(core):
    with pytest.raises(AsmParseError, match="jmp"):
        parse_block("jmp rax", core)


def test_parse_errors_carry_position(core):
    with pytest.raises(AsmParseError, match="line 2"):
        parse_block("mov rax, rbx\nfrob rcx, rdx\n", core)
    with pytest.raises(AsmParseError, match="empty"):
        parse_block("   \n; just a comment\n", core)
    with pytest.raises(AsmParseError, match="ambiguous"):
        parse_block("mov [rax], 80", core)
    with pytest.raises(AsmParseError, match="operand combination"):
        parse_block("add rax", core)


def test_comments_and_blank_lines(core):
    bb = parse_block("mov rax, rbx ; copy\n\n  add rax, 1\n", core)
    assert len(bb) == 2
    assert render_block(bb) == "mov rax, rbx\nadd rax, 1\n"


def test_case_study_roundtrips_exactly(core):
    for text in (CS1_TEXT, CS2_TEXT, B1_TEXT, B2_TEXT):
        bb = parse_block(text, core)
        assert render_block(bb) == text
    assert render_block(parse_block(CS2_TEXT, core)).count("\n") == 6


def test_single_mov_renders_with_newline(core):
    assert render_block(parse_block("mov rax, rbx", core)) == "mov rax, rbx\n"


def test_memory_scale_and_negative_disp(core):
    instr = parse_instruction("mov rax, qword ptr [rbp + rcx*4 - 8]", core)
    mem = instr.operands[1]
    assert (mem.base, mem.index, mem.scale, mem.displacement) == ("rbp", "rcx", 4, -8)
    text = "mov rax, qword ptr [rbp + rcx*4 - 8]\n"
    assert render_block(parse_block(text, core)) == text


def test_hex_immediates_normalize_to_decimal(core):
    bb = parse_block("add rax, 0x10", core)
    assert bb.instructions[0].operands[1] == Immediate(16, 64)
    assert render_block(bb) == "add rax, 16\n"


def test_roundtrip_fixpoint_on_fuzzed_blocks(core, cs2):
    """parse(render(parse(t))) equals parse(t) for 100 generated valid blocks."""
    g = graph.build_graph(core, cs2)
    plan = make_plan(core, g, graph.FeatureSet())
    stream = rngmod.stream(42, "fuzz-roundtrip")
    seen = 0
    while seen < 100:
        blk = sample_from_plan(plan, PerturbConfig(), stream).block
        text = render_block(blk)
        reparsed = parse_block(text, core)
        assert reparsed == blk
        assert render_block(reparsed) == text
        seen += 1
