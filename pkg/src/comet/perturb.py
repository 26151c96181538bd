"""Feature-preserving stochastic block perturbation.

The sampler perturbs a block graph while keeping a requested feature set
intact: vertices are independently retained, deleted, or opcode-replaced;
dependency edges are broken by renaming the involved register (or shifting a
memory displacement) at the later instruction. Rename decisions are grouped
per (instruction, register family) so that edges coupled through a shared
operand are perturbed jointly.

The same perturbation plan drives three consumers: random sampling,
exhaustive enumeration of the reachable space, and a closed-form size count.
The closed form is exact for blocks whose instruction lines are pairwise
distinct and whose renames cannot recreate another line; the bundled tiny
fixtures are authored that way and the equality is asserted in tests.
"""

import itertools
import math
from dataclasses import dataclass, field

from . import kb as kbmod
from .asm import BasicBlock, Instruction, Memory, Register, render_block
from .errors import PreservationError, SpaceLimitError
from .graph import (BlockGraph, CountFeature, DepFeature, FeatureSet, InstFeature,
                    build_graph_from_sets, extract_features, feature_present,
                    resource_sets)

_DISP_SHIFT = 8  # bytes added to a memory displacement to break an address alias


@dataclass(frozen=True)
class PerturbConfig:
    p_inst_retain: float = 0.5
    p_dep_retain: float = 0.5
    p_delete: float = 0.33
    p_dep_explicit_retain: float = 0.1
    max_retries: int = 50

    def __post_init__(self):
        for name in ("p_inst_retain", "p_dep_retain", "p_delete", "p_dep_explicit_retain"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")


@dataclass(frozen=True)
class PerturbResult:
    block: BasicBlock
    graph: BlockGraph
    vertex_map: dict          # original 1-based index -> perturbed index
    ops_applied: tuple        # (operation, detail) telemetry


@dataclass(frozen=True)
class SpaceSize:
    log10_count: float
    count: int = 0


@dataclass(frozen=True)
class _VertexPlan:
    index: int                # 1-based
    preserved: bool
    deletable: bool
    replacements: tuple       # candidate mnemonics
    forms: dict               # mnemonic -> matched slot form


@dataclass(frozen=True)
class _RenameUnit:
    vertex: int               # 1-based
    resource: str             # register family or memory key
    is_memory: bool
    targets: tuple            # candidate target families (register renames)
    disp_shift: bool          # memory units: displacement shift available
    edge_count: int = 0

    def n_choices(self) -> int:
        return len(self.targets) + (1 if self.disp_shift else 0)


@dataclass(frozen=True)
class _Plan:
    kb: object
    graph: BlockGraph
    preserve: FeatureSet
    vertices: tuple           # _VertexPlan per instruction
    units: tuple              # _RenameUnit, sorted by (vertex, resource)
    preserve_count: bool
    units_by_vertex: dict = field(default_factory=dict)   # vertex -> [unit indices]
    base_resources: dict = field(default_factory=dict)    # (vertex, mnem) -> (reads, writes)

    def __post_init__(self):
        by_vertex: dict = {}
        for ui, u in enumerate(self.units):
            by_vertex.setdefault(u.vertex, []).append(ui)
        object.__setattr__(self, "units_by_vertex", by_vertex)
        base: dict = {}
        for vp in self.vertices:
            instr = self.graph.block.instructions[vp.index - 1]
            for mnem, form in vp.forms.items():
                probe = Instruction(mnemonic=mnem, operands=instr.operands,
                                    source_text="", slots=form)
                base[(vp.index, mnem)] = resource_sets(self.kb, probe)
        object.__setattr__(self, "base_resources", base)


def _register_occurrence_widths(kb, instr, family):
    widths = []
    for op in instr.operands:
        if op.kind == "register" and kb.family(op.name) == family:
            widths.append(kb.registers[op.name].width_bits)
        elif op.kind == "memory":
            for reg in (op.base, op.index):
                if reg and kb.family(reg) == family:
                    widths.append(kb.registers[reg].width_bits)
    return widths


def _family_rename_targets(kb, instr, family, forbidden_regs):
    """Families that can replace `family` consistently at every occurrence."""
    fams = None
    for op in instr.operands:
        names = []
        if op.kind == "register" and kb.family(op.name) == family:
            names.append(op.name)
        elif op.kind == "memory":
            names.extend(r for r in (op.base, op.index)
                         if r and kb.family(r) == family)
        for name in names:
            cands = {kb.family(c)
                     for c in kbmod.replacement_registers(kb, name, forbidden_regs)}
            fams = cands if fams is None else fams & cands
    return tuple(sorted(fams)) if fams else ()


def make_plan(kb, g: BlockGraph, preserve: FeatureSet, cfg: PerturbConfig | None = None) -> _Plan:
    pool = extract_features(g)
    pool_by_key = {f.key(): f for f in pool}
    missing = [f.key() for f in preserve if pool_by_key.get(f.key()) != f]
    if missing:
        raise PreservationError(f"features not in the block's pool: {missing}")

    preserve_count = any(isinstance(f, CountFeature) for f in preserve)
    preserved_vertices = {f.index for f in preserve if isinstance(f, InstFeature)}
    preserved_edges = [f.edge for f in preserve if isinstance(f, DepFeature)]
    for e in preserved_edges:
        preserved_vertices.add(e.src)
        preserved_vertices.add(e.dst)

    # resources whose occurrences must stay untouched, per vertex
    locked: set = set()
    preserved_families: set = set()
    for e in preserved_edges:
        for v in (e.src, e.dst):
            locked.add((v, e.resource))
            if e.resource.startswith("["):
                # a memory key is pinned by its address registers too
                for instr_op in g.block.instructions[v - 1].operands:
                    if instr_op.kind == "memory" and instr_op.key() == e.resource:
                        for reg in (instr_op.base, instr_op.index):
                            if reg:
                                locked.add((v, kb.family(reg)))
                                preserved_families.add(kb.family(reg))
            else:
                preserved_families.add(e.resource)
    forbidden_regs = set()
    for fam in preserved_families:
        member = kb.family_member(fam, 64) or next(
            (n for n, r in kb.registers.items() if r.family == fam), None)
        if member:
            forbidden_regs.add(member)

    vertices = []
    for i, instr in enumerate(g.block.instructions, start=1):
        preserved = i in preserved_vertices
        if preserved:
            replacements = ()
        else:
            sig = kbmod.instruction_signature(kb, instr)
            replacements = tuple(kbmod.replacement_opcodes(kb, instr.mnemonic, sig))
        forms = {instr.mnemonic: instr.slots}
        sig = kbmod.instruction_signature(kb, instr)
        for m in replacements:
            forms[m] = kbmod.matching_form(kb, m, sig)
        vertices.append(_VertexPlan(
            index=i,
            preserved=preserved,
            deletable=not preserve_count and not preserved,
            replacements=replacements,
            forms=forms,
        ))

    preserved_edge_ids = {(e.src, e.dst, e.kind, e.resource) for e in preserved_edges}
    unit_edges: dict = {}
    for e in g.dep_edges:
        if (e.src, e.dst, e.kind, e.resource) in preserved_edge_ids:
            continue
        key = (e.dst, e.resource)
        if key in locked:
            continue
        unit_edges.setdefault(key, []).append(e)

    units = []
    for (vertex, resource), edges in sorted(unit_edges.items()):
        instr = g.block.instructions[vertex - 1]
        if resource.startswith("["):
            mem_ops = [op for op in instr.operands
                       if op.kind == "memory" and op.key() == resource]
            base = mem_ops[0].base if mem_ops else None
            targets = ()
            if base and (vertex, kb.family(base)) not in locked:
                targets = _family_rename_targets(kb, instr, kb.family(base),
                                                 forbidden_regs)
            units.append(_RenameUnit(vertex=vertex, resource=resource, is_memory=True,
                                     targets=targets, disp_shift=True,
                                     edge_count=len(edges)))
        else:
            targets = _family_rename_targets(kb, instr, resource, forbidden_regs)
            units.append(_RenameUnit(vertex=vertex, resource=resource, is_memory=False,
                                     targets=targets, disp_shift=False,
                                     edge_count=len(edges)))

    return _Plan(kb=kb, graph=g, preserve=preserve, vertices=tuple(vertices),
                 units=tuple(units), preserve_count=preserve_count)


def _rename_register(kb, name, target_family):
    width = kb.registers[name].width_bits
    member = kb.family_member(target_family, width)
    if member is None:
        raise PreservationError(f"family {target_family!r} has no {width}-bit member")
    return member


def _materialize(plan: _Plan, vertex_choices, unit_choices) -> tuple:
    """Build (BasicBlock, vertex_map, reads, writes) from the decisions.

    vertex_choices[i] is None (deleted) or the mnemonic to keep/replace with.
    unit_choices[u] is None (kept), a target family, or 'disp'.
    """
    kb = plan.kb
    new_instrs = []
    vertex_map = {}
    reads, writes = [], []
    for vp, choice in zip(plan.vertices, vertex_choices):
        if choice is None:
            continue
        orig = plan.graph.block.instructions[vp.index - 1]
        operands = orig.operands
        unit_ids = plan.units_by_vertex.get(vp.index, ())

        # renames are keyed to the ORIGINAL operands and applied in one pass,
        # so units targeting each other's families cannot cascade
        fam_map: dict = {}
        mem_map: dict = {}
        for ui in unit_ids:
            uchoice = unit_choices[ui]
            if uchoice is None:
                continue
            unit = plan.units[ui]
            if unit.is_memory:
                mem_map[unit.resource] = uchoice
            else:
                fam_map[unit.resource] = uchoice

        renamed = bool(fam_map or mem_map)
        if renamed:
            operands = list(operands)
            for k, op in enumerate(operands):
                if op.kind == "register":
                    tgt = fam_map.get(kb.family(op.name))
                    if tgt:
                        operands[k] = Register(_rename_register(kb, op.name, tgt))
                elif op.kind == "memory":
                    base, index, disp = op.base, op.index, op.displacement
                    mchoice = mem_map.get(op.key())
                    if mchoice == "disp":
                        disp += _DISP_SHIFT
                    elif mchoice is not None:
                        base = _rename_register(kb, base, mchoice)
                    elif base:
                        tgt = fam_map.get(kb.family(base))
                        if tgt:
                            base = _rename_register(kb, base, tgt)
                    if index:
                        tgt = fam_map.get(kb.family(index))
                        if tgt:
                            index = _rename_register(kb, index, tgt)
                    if (base, index, disp) != (op.base, op.index, op.displacement):
                        operands[k] = Memory(base, index, op.scale, disp, op.width_bits)
            operands = tuple(operands)

        instr = Instruction(mnemonic=choice, operands=operands,
                            source_text="", slots=vp.forms[choice])
        if renamed:
            r, w = resource_sets(kb, instr)
        else:
            r, w = plan.base_resources[(vp.index, choice)]
        new_instrs.append(instr)
        reads.append(r)
        writes.append(w)
        vertex_map[vp.index] = len(new_instrs)
    return BasicBlock(tuple(new_instrs)), vertex_map, reads, writes


def _check_preserved(plan: _Plan, block: BasicBlock, vertex_map, reads, writes):
    g2 = build_graph_from_sets(block, reads, writes)
    for f in plan.preserve:
        if not feature_present(plan.graph, g2, vertex_map, f):
            return None, f
    return g2, None


def _draw(plan: _Plan, cfg: PerturbConfig, rng):
    n = len(plan.vertices)
    # one batched draw per attempt: up to 3 uniforms per vertex, 3 per unit
    u = rng.random(3 * (n + len(plan.units)))
    ui = 0
    vertex_choices = []
    ops = []
    survivors = 0
    for vp in plan.vertices:
        orig_mnem = plan.graph.block.instructions[vp.index - 1].mnemonic
        if vp.preserved:
            vertex_choices.append(orig_mnem)
            survivors += 1
            continue
        if u[ui] < cfg.p_inst_retain:
            ui += 1
            vertex_choices.append(orig_mnem)
            survivors += 1
            continue
        ui += 1
        may_delete = vp.deletable and (survivors > 0 or vp.index < n)
        if may_delete:
            if u[ui] < cfg.p_delete:
                ui += 1
                vertex_choices.append(None)
                ops.append(("delete", vp.index))
                continue
            ui += 1
        if vp.replacements:
            k = min(int(u[ui] * len(vp.replacements)), len(vp.replacements) - 1)
            ui += 1
            mnem = vp.replacements[k]
            vertex_choices.append(mnem)
            ops.append(("replace", (vp.index, mnem)))
        else:
            vertex_choices.append(orig_mnem)  # no candidates: retained
        survivors += 1

    unit_choices = []
    for unit in plan.units:
        if u[ui] < cfg.p_dep_explicit_retain:
            ui += 1
            unit_choices.append(None)
            continue
        ui += 1
        if u[ui] >= (1.0 - cfg.p_dep_retain):
            ui += 1
            unit_choices.append(None)
            continue
        ui += 1
        n_opts = unit.n_choices()
        if n_opts == 0:
            unit_choices.append(None)  # no candidates: retained
            continue
        pick = min(int(u[ui] * n_opts), n_opts - 1)
        ui += 1
        if pick < len(unit.targets):
            choice = unit.targets[pick]
            ops.append(("rename", (unit.vertex, unit.resource, choice)))
        else:
            choice = "disp"
            ops.append(("shift", (unit.vertex, unit.resource)))
        unit_choices.append(choice)
    return vertex_choices, unit_choices, ops


def sample_from_plan(plan: _Plan, cfg: PerturbConfig, rng) -> PerturbResult:
    last_violation = None
    for _ in range(cfg.max_retries):
        vertex_choices, unit_choices, ops = _draw(plan, cfg, rng)
        block, vertex_map, reads, writes = _materialize(plan, vertex_choices, unit_choices)
        g2, violated = _check_preserved(plan, block, vertex_map, reads, writes)
        if g2 is not None:
            return PerturbResult(block=block, graph=g2, vertex_map=vertex_map,
                                 ops_applied=tuple(ops))
        last_violation = violated
    raise PreservationError(
        f"could not preserve {last_violation.key()} within {cfg.max_retries} retries",
        feature=last_violation)


def sample_perturbation(kb, g: BlockGraph, preserve: FeatureSet,
                        cfg: PerturbConfig, rng) -> PerturbResult:
    """Draw one feature-preserving perturbation of `g` (retrying internally)."""
    plan = make_plan(kb, g, preserve, cfg)
    return sample_from_plan(plan, cfg, rng)


def _vertex_choice_list(plan: _Plan, vp: _VertexPlan):
    orig = plan.graph.block.instructions[vp.index - 1].mnemonic
    choices = [orig] + list(vp.replacements)
    if vp.deletable:
        choices.append(None)
    return choices


def _unit_choice_list(unit: _RenameUnit):
    choices = [None] + list(unit.targets)
    if unit.disp_shift:
        choices.append("disp")
    return choices


def enumerate_space(kb, g: BlockGraph, preserve: FeatureSet, limit: int) -> set:
    """The complete reachable space, deduplicated by canonical rendering.

    Every member validates against the KB and preserves `preserve`. Raises
    SpaceLimitError once more than `limit` distinct members exist.
    """
    plan = make_plan(kb, g, preserve)
    vchoices = [_vertex_choice_list(plan, vp) for vp in plan.vertices]
    uchoices = [_unit_choice_list(u) for u in plan.units]

    seen: dict = {}
    for vassign in itertools.product(*vchoices):
        if all(c is None for c in vassign):
            continue  # a basic block keeps at least one instruction
        for uassign in itertools.product(*uchoices):
            block, vertex_map, reads, writes = _materialize(plan, vassign, uassign)
            text = render_block(block)
            if text in seen:
                continue
            g2, violated = _check_preserved(plan, block, vertex_map, reads, writes)
            if violated is not None:
                continue
            seen[text] = block
            if len(seen) > limit:
                raise SpaceLimitError(
                    f"perturbation space exceeds limit {limit}; exact mode unavailable")
    return set(seen.values())


def estimate_space_size(kb, g: BlockGraph, preserve: FeatureSet) -> SpaceSize:
    """Closed-form size of the reachable space.

    Per vertex: (1 + opcode replacements) x the rename choices of its units,
    plus one for deletion when allowed; multiplied across vertices; minus the
    all-deleted assignment. Preserved elements contribute a factor of one.
    """
    plan = make_plan(kb, g, preserve)
    units_at: dict = {}
    for u in plan.units:
        units_at.setdefault(u.vertex, []).append(u)

    count = 1
    all_deletable = True
    for vp in plan.vertices:
        survive_ways = 1 + len(vp.replacements)
        for u in units_at.get(vp.index, []):
            survive_ways *= 1 + u.n_choices()
        factor = survive_ways + (1 if vp.deletable else 0)
        all_deletable = all_deletable and vp.deletable
        count *= factor
    if all_deletable:
        count -= 1
    return SpaceSize(log10_count=math.log10(count), count=count)
