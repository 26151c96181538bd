"""Cost models: the crude interpretable model, an external-process adapter
speaking the stdin/stdout wire protocol, and an LRU caching wrapper.

Wire protocol (bit-exact): request = canonical block text on stdin terminated
by EOF; response = one line containing a single positive ASCII decimal; exit 0.
The microarchitecture label travels in the COMET_MARCH environment variable.
"""

import csv
import os
import shlex
import subprocess
import threading
from collections import OrderedDict
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .asm import render_block
from .errors import ModelError
from .graph import RAW, BlockGraph, CountFeature, DepFeature, FeatureSet, InstFeature, build_graph


@dataclass(frozen=True)
class CostTable:
    microarchitecture: str
    per_opcode: dict  # mnemonic -> positive cycles

    @classmethod
    def from_csv(cls, path, microarchitecture: str) -> "CostTable":
        per_opcode = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["mnemonic", "cycles"]:
                raise ModelError(f"{path}: cost table must have header 'mnemonic,cycles'")
            for row in reader:
                cycles = float(row["cycles"])
                if cycles <= 0:
                    raise ModelError(f"{path}: non-positive cost for {row['mnemonic']!r}")
                per_opcode[row["mnemonic"]] = cycles
        return cls(microarchitecture, per_opcode)

    def check_covers(self, kb):
        missing = [m for m, spec in kb.opcodes.items()
                   if spec.bb_valid and m not in self.per_opcode]
        if missing:
            raise ModelError(f"cost table {self.microarchitecture!r} missing opcodes: "
                             f"{sorted(missing)}")

    def cost(self, mnemonic: str) -> float:
        try:
            return self.per_opcode[mnemonic]
        except KeyError:
            raise ModelError(f"no cost for opcode {mnemonic!r} in table "
                             f"{self.microarchitecture!r}") from None


def bundled_cost_table(march: str) -> CostTable:
    path = Path(resources.files("comet").joinpath(f"data/cost_{march}.csv"))
    if not path.exists():
        raise ModelError(f"no bundled cost table for microarchitecture {march!r}")
    return CostTable.from_csv(path, march)


@dataclass(frozen=True)
class TargetInterval:
    """Band of predictions treated as 'similar', clamped at zero.

    Membership is strict: epsilon is the radius below which a prediction
    change still counts as similar, so a change of exactly epsilon (e.g. one
    instruction-count quantum under the crude model) falls outside. The
    unperturbed prediction itself is always a member.
    """
    center: float
    epsilon: float

    @property
    def lower(self) -> float:
        return max(0.0, self.center - self.epsilon)

    @property
    def upper(self) -> float:
        return self.center + self.epsilon

    def contains(self, value: float) -> bool:
        return value == self.center or abs(value - self.center) < self.epsilon


def instruction_count_cost(n: int) -> float:
    return n / 4.0


def dep_cost(table: CostTable, g: BlockGraph, edge) -> float:
    """WAR/WAW cost nothing (resolvable by renaming); a RAW pair costs the sum
    of its two instruction costs since they execute serially."""
    if edge.kind != RAW:
        return 0.0
    insts = g.block.instructions
    return (table.cost(insts[edge.src - 1].mnemonic)
            + table.cost(insts[edge.dst - 1].mnemonic))


def crude_predict(table: CostTable, g: BlockGraph) -> float:
    """Maximum feature cost over the block's feature pool."""
    best = instruction_count_cost(len(g))
    for instr in g.block.instructions:
        best = max(best, table.cost(instr.mnemonic))
    for edge in g.dep_edges:
        best = max(best, dep_cost(table, g, edge))
    return best


def ground_truth_explanation(table: CostTable, g: BlockGraph) -> FeatureSet:
    """Every feature whose cost attains the crude prediction. Never empty."""
    prediction = crude_predict(table, g)
    feats = []
    if instruction_count_cost(len(g)) == prediction:
        feats.append(CountFeature(len(g)))
    for i, instr in enumerate(g.block.instructions):
        if table.cost(instr.mnemonic) == prediction:
            feats.append(InstFeature(i + 1))
    for edge in g.dep_edges:
        if dep_cost(table, g, edge) == prediction:
            feats.append(DepFeature(edge))
    return FeatureSet(feats)


class CostModel:
    """Uniform handle: a named, deterministic BasicBlock -> positive cycles map."""

    name = "abstract"
    concurrent_safe = True

    def predict(self, bb) -> float:
        raise NotImplementedError


class CrudeModel(CostModel):
    def __init__(self, table: CostTable, kb):
        self.table = table
        self.kb = kb
        self.name = f"crude[{table.microarchitecture}]"
        self.concurrent_safe = True

    def predict(self, bb) -> float:
        return crude_predict(self.table, build_graph(self.kb, bb))

    def predict_graph(self, g: BlockGraph) -> float:
        return crude_predict(self.table, g)


class FunctionModel(CostModel):
    """Wrap any callable as a model (test fixtures, instruction-count models)."""

    def __init__(self, name: str, fn, concurrent_safe: bool = True):
        self.name = name
        self._fn = fn
        self.concurrent_safe = concurrent_safe

    def predict(self, bb) -> float:
        return self._fn(bb)


_SPAWN_GATE = threading.BoundedSemaphore(int(os.environ.get("COMET_MAX_SPAWNS", "4")))


def external_predict(command, timeout: float, bb, march: str | None = None) -> float:
    """Run one external-model query over the wire protocol."""
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    env = dict(os.environ)
    if march:
        env["COMET_MARCH"] = march
    text = render_block(bb)
    with _SPAWN_GATE:
        try:
            proc = subprocess.run(argv, input=text, capture_output=True, text=True,
                                  timeout=timeout, env=env)
        except FileNotFoundError as exc:
            raise ModelError(f"cannot spawn external model {argv[0]!r}: {exc}") from exc
        except subprocess.TimeoutExpired as exc:
            raise ModelError(f"external model {argv[0]!r} timed out after "
                             f"{timeout}s") from exc
    if proc.returncode != 0:
        raise ModelError(f"external model {argv[0]!r} exited with status "
                         f"{proc.returncode}: {proc.stderr.strip()}")
    out = proc.stdout.strip()
    try:
        value = float(out)
    except ValueError:
        raise ModelError(f"external model {argv[0]!r} printed non-numeric output "
                         f"{out!r}") from None
    if value <= 0:
        raise ModelError(f"external model {argv[0]!r} printed non-positive value {value}")
    return value


class ExternalModel(CostModel):
    def __init__(self, command, march: str | None = None, timeout: float = 60.0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.command = argv
        self.march = march
        self.timeout = timeout
        self.name = f"exec:{argv[0]}" + (f"[{march}]" if march else "")
        self.concurrent_safe = True

    def predict(self, bb) -> float:
        return external_predict(self.command, self.timeout, bb, self.march)


class CachedModel(CostModel):
    """LRU memoization keyed by canonical block text; safe under concurrency."""

    def __init__(self, inner: CostModel, capacity: int):
        if capacity < 1:
            raise ValueError("cache capacity must be >= 1")
        self.inner = inner
        self.capacity = capacity
        self.name = inner.name
        self.concurrent_safe = inner.concurrent_safe
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()
        self._store: OrderedDict = OrderedDict()

    def predict(self, bb) -> float:
        key = render_block(bb)
        with self._lock:
            if key in self._store:
                self.hits += 1
                self._store.move_to_end(key)
                return self._store[key]
        value = self.inner.predict(bb)
        with self._lock:
            self.misses += 1
            self._store[key] = value
            self._store.move_to_end(key)
            while len(self._store) > self.capacity:
                self._store.popitem(last=False)
        return value


def cached(model: CostModel, capacity: int) -> CachedModel:
    return CachedModel(model, capacity)
