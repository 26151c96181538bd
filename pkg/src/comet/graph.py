"""Basic-block multigraph: RAW/WAR/WAW hazard edges and block features.

Vertices are the instructions in order (sequence edges are implicit in that
order). Dependency edges connect an earlier instruction to a later one sharing
a resource: a register alias family or a normalized memory-address expression.
By default only the nearest conflicting predecessor per (resource, kind,
consumer) produces an edge; `all_pairs=True` keeps every conflicting pair.
"""

from dataclasses import dataclass

RAW = "RAW"
WAR = "WAR"
WAW = "WAW"
DEP_KINDS = (RAW, WAR, WAW)


@dataclass(frozen=True, order=True)
class DepEdge:
    src: int        # 1-based index of the earlier instruction
    dst: int        # 1-based index of the later instruction, dst > src
    kind: str
    resource: str   # register family or normalized memory key


@dataclass(frozen=True)
class BlockGraph:
    block: object                # BasicBlock
    reads: tuple                 # per-instruction frozenset of resources
    writes: tuple
    dep_edges: tuple             # sorted tuple of DepEdge

    def __len__(self):
        return len(self.block.instructions)


@dataclass(frozen=True, order=True)
class InstFeature:
    index: int      # 1-based

    def key(self) -> str:
        return f"inst:{self.index}"


@dataclass(frozen=True, order=True)
class DepFeature:
    edge: DepEdge

    def key(self) -> str:
        e = self.edge
        return f"dep:{e.src}-{e.dst}:{e.kind.lower()}:{e.resource}"


@dataclass(frozen=True, order=True)
class CountFeature:
    count: int

    def key(self) -> str:
        return "numinsts"


class FeatureSet:
    """Ordered feature collection: Inst by index, Dep by edge order, NumInsts last."""

    def __init__(self, features=()):
        features = set(features)
        insts = sorted(f for f in features if isinstance(f, InstFeature))
        deps = sorted(f for f in features if isinstance(f, DepFeature))
        counts = [f for f in features if isinstance(f, CountFeature)]
        if len(counts) > 1:
            raise ValueError("a feature set holds at most one instruction-count feature")
        self._features = tuple(insts + deps + counts)
        self._keyset = frozenset(f.key() for f in self._features)

    def __iter__(self):
        return iter(self._features)

    def __len__(self):
        return len(self._features)

    def __contains__(self, f):
        return f.key() in self._keyset

    def __eq__(self, other):
        return isinstance(other, FeatureSet) and self._features == other._features

    def __hash__(self):
        return hash(self._features)

    def __repr__(self):
        return "FeatureSet(" + ", ".join(f.key() for f in self._features) + ")"

    def issubset(self, other: "FeatureSet") -> bool:
        return self._keyset <= other._keyset

    def union(self, features) -> "FeatureSet":
        return FeatureSet(tuple(self._features) + tuple(features))

    def key(self) -> str:
        return ",".join(f.key() for f in self._features)


def resource_sets(kb, instr):
    """(reads, writes) resource sets for one instruction: explicit operands per
    their slot access, base/index registers of every address expression, and
    the opcode's implicit registers. Registers resolve to alias families."""
    reads, writes = set(), set()
    spec = kb.opcodes[instr.mnemonic]
    for slot, op in zip(instr.slots, instr.operands):
        if op.kind == "register":
            fam = kb.family(op.name)
            if slot.access in ("read", "readwrite"):
                reads.add(fam)
            if slot.access in ("write", "readwrite"):
                writes.add(fam)
        elif op.kind == "memory":
            for reg in (op.base, op.index):
                if reg:
                    reads.add(kb.family(reg))
            if slot.kind != "agen":
                key = op.key()
                if slot.access in ("read", "readwrite"):
                    reads.add(key)
                if slot.access in ("write", "readwrite"):
                    writes.add(key)
    for reg in spec.implicit_reads:
        reads.add(kb.family(reg))
    for reg in spec.implicit_writes:
        writes.add(kb.family(reg))
    return frozenset(reads), frozenset(writes)


def build_graph(kb, bb, all_pairs: bool = False) -> BlockGraph:
    """Construct the dependency multigraph of a block valid under `kb`."""
    reads, writes = [], []
    for instr in bb.instructions:
        r, w = resource_sets(kb, instr)
        reads.append(r)
        writes.append(w)
    return build_graph_from_sets(bb, reads, writes, all_pairs)


def build_graph_from_sets(bb, reads, writes, all_pairs: bool = False) -> BlockGraph:
    """Edge construction over precomputed per-instruction resource sets."""
    edges = []
    if all_pairs:
        for j in range(len(bb.instructions)):
            for i in range(j):
                for r in writes[i] & reads[j]:
                    edges.append(DepEdge(i + 1, j + 1, RAW, r))
                for r in reads[i] & writes[j]:
                    edges.append(DepEdge(i + 1, j + 1, WAR, r))
                for r in writes[i] & writes[j]:
                    edges.append(DepEdge(i + 1, j + 1, WAW, r))
    else:
        last_write: dict = {}
        last_read: dict = {}
        for j in range(len(bb.instructions)):
            for r in reads[j]:
                if r in last_write:
                    edges.append(DepEdge(last_write[r] + 1, j + 1, RAW, r))
            for r in writes[j]:
                if r in last_read:
                    edges.append(DepEdge(last_read[r] + 1, j + 1, WAR, r))
                if r in last_write:
                    edges.append(DepEdge(last_write[r] + 1, j + 1, WAW, r))
            for r in reads[j]:
                last_read[r] = j
            for r in writes[j]:
                last_write[r] = j

    return BlockGraph(block=bb, reads=tuple(reads), writes=tuple(writes),
                      dep_edges=tuple(sorted(edges)))


def extract_features(g: BlockGraph) -> FeatureSet:
    """The practical feature pool: one feature per instruction, per dependency
    edge, and one for the instruction count."""
    feats = [InstFeature(i + 1) for i in range(len(g))]
    feats += [DepFeature(e) for e in g.dep_edges]
    feats.append(CountFeature(len(g)))
    return FeatureSet(feats)


def feature_present(original: BlockGraph, perturbed: BlockGraph, mapping: dict,
                    f) -> bool:
    """Whether feature `f` of `original` survives in `perturbed`.

    `mapping` sends surviving original 1-based indices to perturbed ones.
    References to deleted vertices make the feature absent, never an error.
    """
    if isinstance(f, CountFeature):
        return len(perturbed) == f.count
    if isinstance(f, InstFeature):
        pi = mapping.get(f.index)
        if pi is None:
            return False
        return (perturbed.block.instructions[pi - 1].mnemonic
                == original.block.instructions[f.index - 1].mnemonic)
    if isinstance(f, DepFeature):
        e = f.edge
        src = mapping.get(e.src)
        dst = mapping.get(e.dst)
        if src is None or dst is None:
            return False
        return DepEdge(src, dst, e.kind, e.resource) in perturbed.dep_edges
    raise TypeError(f"not a feature: {f!r}")


def present_keys(original: BlockGraph, perturbed: BlockGraph, mapping: dict,
                 pool: FeatureSet) -> frozenset:
    """Keys of every pool feature present in `perturbed` (coverage fast path)."""
    return frozenset(f.key() for f in pool
                     if feature_present(original, perturbed, mapping, f))


def graph_to_dict(g: BlockGraph) -> dict:
    """JSON-ready dump used by the `graph` CLI subcommand and golden tests."""
    from .asm import render_instruction
    return {
        "num_insts": len(g),
        "instructions": [
            {
                "index": i + 1,
                "text": render_instruction(instr),
                "mnemonic": instr.mnemonic,
                "reads": sorted(g.reads[i]),
                "writes": sorted(g.writes[i]),
            }
            for i, instr in enumerate(g.block.instructions)
        ],
        "dep_edges": [
            {"src": e.src, "dst": e.dst, "kind": e.kind, "resource": e.resource}
            for e in g.dep_edges
        ],
    }
