import math

import pytest

from comet.asm import parse_block, render_block
from comet.errors import SpaceLimitError
from comet.graph import (CountFeature, DepEdge, DepFeature, FeatureSet, InstFeature,
                         build_graph, extract_features, feature_present)
from comet.kb import validate_instruction
from comet.perturb import (PerturbConfig, enumerate_space, estimate_space_size,
                           make_plan, sample_from_plan, sample_perturbation)
from comet import rng as rngmod

TWO_INSTR = "mov rax, rbx\nadd rbx, rcx\n"


@pytest.fixture(scope="module")
def two_instr(tiny):
    bb = parse_block(TWO_INSTR, tiny)
    return bb, build_graph(tiny, bb)


def test_preserve_all_is_identity(tiny, two_instr):
    bb, g = two_instr
    pool = extract_features(g)
    for seed in range(50):
        r = sample_perturbation(tiny, g, pool, PerturbConfig(),
                                rngmod.stream(seed, "idt"))
        assert render_block(r.block) == render_block(bb)
        assert r.vertex_map == {1: 1, 2: 2}


def test_same_seed_same_result(core, cs2):
    g = build_graph(core, cs2)
    preserve = FeatureSet([InstFeature(4)])
    a = sample_perturbation(core, g, preserve, PerturbConfig(), rngmod.stream(7, "d"))
    b = sample_perturbation(core, g, preserve, PerturbConfig(), rngmod.stream(7, "d"))
    assert render_block(a.block) == render_block(b.block)
    assert a.ops_applied == b.ops_applied


def test_numinsts_preservation_sweep(core, fig1):
    g = build_graph(core, fig1)
    preserve = FeatureSet([CountFeature(4)])
    plan = make_plan(core, g, preserve)
    for seed in range(1000):
        r = sample_from_plan(plan, PerturbConfig(), rngmod.stream(seed, "n"))
        assert len(r.block.instructions) == 4


def test_preserved_dep_keeps_endpoints(core, cs2):
    g = build_graph(core, cs2)
    dep = DepFeature(DepEdge(3, 6, "RAW", "rax"))
    plan = make_plan(core, g, FeatureSet([dep]))
    stream = rngmod.stream(3, "dep")
    for _ in range(300):
        r = sample_from_plan(plan, PerturbConfig(), stream)
        assert feature_present(g, r.graph, r.vertex_map, dep)
        src = r.vertex_map[3]
        dst = r.vertex_map[6]
        assert r.block.instructions[src - 1].mnemonic == "lea"
        assert r.block.instructions[dst - 1].mnemonic == "imul"


def test_samples_validate_against_kb(core, cs2):
    g = build_graph(core, cs2)
    plan = make_plan(core, g, FeatureSet())
    stream = rngmod.stream(11, "v")
    for _ in range(500):
        r = sample_from_plan(plan, PerturbConfig(), stream)
        for instr in r.block.instructions:
            assert validate_instruction(core, instr)


def test_fig1_partial_preserve_can_drop_to_two(core, fig1):
    """Preserving only the final instruction admits the 2-line {1, 4} block."""
    g = build_graph(core, fig1)
    plan = make_plan(core, g, FeatureSet([InstFeature(4)]))
    stream = rngmod.stream(0, "fig1")
    seen_sizes = set()
    for _ in range(2000):
        r = sample_from_plan(plan, PerturbConfig(), stream)
        assert r.block.instructions[r.vertex_map[4] - 1].mnemonic == "pop"
        seen_sizes.add(len(r.block.instructions))
        if (len(r.block.instructions) == 2 and r.vertex_map.get(1) == 1
                and r.block.instructions[0].mnemonic == "add"):
            break
    else:
        pytest.fail("never drew the {instruction 1, instruction 4} perturbation")


def test_enumerate_matches_estimate_exactly(tiny, two_instr):
    bb, g = two_instr
    space = enumerate_space(tiny, g, FeatureSet(), limit=1000)
    size = estimate_space_size(tiny, g, FeatureSet())
    assert size.count == len(space) == 51
    assert math.isclose(size.log10_count, math.log10(51))


def test_single_instruction_spaces(tiny):
    bb = parse_block("inc rax", tiny)
    g = build_graph(tiny, bb)
    # preserving everything leaves only the block itself
    full = estimate_space_size(tiny, g, extract_features(g))
    assert full.count == 1 and full.log10_count == 0.0
    assert enumerate_space(tiny, g, extract_features(g), limit=10) == {bb}
    # free block: inc stays or becomes dec; deletion would empty the block
    free = estimate_space_size(tiny, g, FeatureSet())
    assert free.count == 2
    assert math.isclose(free.log10_count, math.log10(2), abs_tol=1e-12)
    assert len(enumerate_space(tiny, g, FeatureSet(), limit=10)) == 2


def test_limit_exceeded(tiny):
    bb = parse_block("mov rax, rbx\nadd rbx, rcx\nsub rcx, rdx\n", tiny)
    g = build_graph(tiny, bb)
    true_count = estimate_space_size(tiny, g, FeatureSet()).count
    assert true_count > 10
    with pytest.raises(SpaceLimitError):
        enumerate_space(tiny, g, FeatureSet(), limit=10)


def test_estimate_equals_enumeration_on_three_instr_fixtures(tiny):
    # authored so distinct perturbation choices yield distinct renderings
    # (a rename must never recreate another vertex's exact line)
    fixtures = [
        "mov rax, rbx\nadd rbx, rcx\nsub rcx, rdx\n",
        "inc rax\nadd rbx, rax\ndec rcx\n",
        "mov rax, rbx\ninc rbx\n",
        "add rax, rbx\nsub rbx, rcx\n",
        "inc rax\ndec rbx\n",
    ]
    for text in fixtures:
        bb = parse_block(text, tiny)
        g = build_graph(tiny, bb)
        pool = list(extract_features(g))
        preserves = [FeatureSet(), FeatureSet(pool[:1]), FeatureSet(pool[-1:])]
        for preserve in preserves:
            space = enumerate_space(tiny, g, preserve, limit=200000)
            size = estimate_space_size(tiny, g, preserve)
            assert size.count == len(space), (text, preserve.key())


def test_monotonicity_of_enumeration(tiny):
    """F1 subset of F2 implies space(F2) subset of space(F1)."""
    texts = ["mov rax, rbx\nadd rbx, rcx\n", "inc rax\nadd rbx, rax\ndec rcx\n"]
    stream = rngmod.stream(5, "mono")
    checked = 0
    for text in texts:
        bb = parse_block(text, tiny)
        g = build_graph(tiny, bb)
        pool = list(extract_features(g))
        spaces = {}
        for _ in range(60):
            picks = [f for f in pool if stream.random() < 0.4]
            f1 = FeatureSet(picks)
            f2 = f1.union([pool[int(stream.integers(len(pool)))]])
            for fs in (f1, f2):
                if fs.key() not in spaces:
                    spaces[fs.key()] = {render_block(b) for b in
                                        enumerate_space(tiny, g, fs, limit=200000)}
            assert spaces[f2.key()] <= spaces[f1.key()]
            checked += 1
    assert checked >= 100


def test_samples_live_inside_the_enumerated_space(tiny, two_instr):
    bb, g = two_instr
    texts = {render_block(b) for b in enumerate_space(tiny, g, FeatureSet(), 1000)}
    plan = make_plan(tiny, g, FeatureSet())
    stream = rngmod.stream(21, "support")
    drawn = set()
    for _ in range(3000):
        drawn.add(render_block(sample_from_plan(plan, PerturbConfig(), stream).block))
    assert drawn <= texts
    assert len(drawn) == len(texts)  # every member is reachable at this scale


def test_diversity_no_block_dominates(tiny):
    bb = parse_block("mov rax, rbx\nadd rbx, rcx\nsub rcx, rdx\n", tiny)
    g = build_graph(tiny, bb)
    assert estimate_space_size(tiny, g, FeatureSet()).count >= 100
    plan = make_plan(tiny, g, FeatureSet())
    stream = rngmod.stream(2, "div")
    counts = {}
    n = 10000
    for _ in range(n):
        t = render_block(sample_from_plan(plan, PerturbConfig(), stream).block)
        counts[t] = counts.get(t, 0) + 1
    assert max(counts.values()) / n <= 0.25


def test_preserve_outside_pool_errors(tiny, two_instr):
    from comet.errors import PreservationError
    bb, g = two_instr
    with pytest.raises(PreservationError, match="not in the block's pool"):
        make_plan(tiny, g, FeatureSet([InstFeature(99)]))
    with pytest.raises(PreservationError, match="numinsts"):
        make_plan(tiny, g, FeatureSet([CountFeature(7)]))


def test_memory_dep_perturbation_paths(core):
    bb = parse_block(
        "mov qword ptr [rax + 8], rbx\nmov rcx, qword ptr [rax + 8]\n", core)
    g = build_graph(core, bb)
    dep = DepFeatureByKey(g, "[rax+8]")
    plan = make_plan(core, g, FeatureSet())
    stream = rngmod.stream(8, "mem")
    shifted = renamed = 0
    for _ in range(400):
        r = sample_from_plan(plan, PerturbConfig(), stream)
        for op, detail in r.ops_applied:
            if op == "shift":
                shifted += 1
            if op == "rename" and detail[1].startswith("["):
                renamed += 1
    assert shifted > 0 and renamed > 0


def DepFeatureByKey(g, resource):
    for e in g.dep_edges:
        if e.resource == resource:
            return DepFeature(e)
    raise AssertionError(f"no edge with resource {resource}")
