"""x86 instruction-set knowledge base.

The KB is data, not code: a versioned JSON file describing registers (with
alias families) and opcode operand forms. Two KBs ship with the package:
``isa_core.json`` (covers the instruction mix of the bundled fixtures) and
``isa_tiny.json`` (a handful of opcodes, small enough for exhaustive
enumeration oracles).
"""

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import KbError

SLOT_KINDS = ("register", "memory", "immediate", "agen")
ACCESSES = ("read", "write", "readwrite")
KB_SCHEMA_VERSIONS = ("1", "2")

# Mnemonics that may never appear in a basic block; the loader refuses KBs
# that mark them bb_valid.
_CONTROL_FLOW = {"call", "ret", "iret", "syscall", "int", "loop", "loope", "loopne"}

_FLAGS_NAME = "rflags"


def _is_pow2_width(w) -> bool:
    return isinstance(w, int) and 8 <= w <= 512 and (w & (w - 1)) == 0


@dataclass(frozen=True)
class OperandSlot:
    kind: str                 # register | memory | immediate | agen
    width_bits: int
    access: str               # read | write | readwrite

    def matches(self, kind: str, width: int) -> bool:
        """Syntactic match: a bracket expression (kind 'memory') satisfies an
        agen slot at any width; everything else matches kind and width exactly."""
        if self.kind == "agen":
            return kind in ("memory", "agen")
        return self.kind == kind and self.width_bits == width


@dataclass(frozen=True)
class OpcodeSpec:
    mnemonic: str
    bb_valid: bool
    forms: tuple  # tuple of slot tuples, one per accepted operand form
    implicit_reads: frozenset = frozenset()
    implicit_writes: frozenset = frozenset()
    per_arch_throughput: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RegisterSpec:
    name: str
    width_bits: int
    family: str
    substitutable: bool


@dataclass(frozen=True)
class IsaKb:
    version: str
    registers: dict            # name -> RegisterSpec
    opcodes: dict              # mnemonic -> OpcodeSpec
    track_flags: bool = False
    family_index: dict = field(default_factory=dict)  # (family, width) -> name

    def __post_init__(self):
        if not self.family_index:
            idx = {(r.family, r.width_bits): r.name for r in self.registers.values()}
            object.__setattr__(self, "family_index", idx)

    def family(self, reg_name: str) -> str:
        return self.registers[reg_name].family

    def family_member(self, family: str, width: int) -> str | None:
        return self.family_index.get((family, width))


def bundled_kb_path(name: str) -> Path:
    """Path of a KB file shipped inside the package (e.g. 'isa_core')."""
    return Path(resources.files("comet").joinpath(f"data/{name}.json"))


def _form_key(slots) -> tuple:
    # agen slots match any width, so they normalize to width 0 in form keys
    return tuple((s.kind, 0 if s.kind == "agen" else s.width_bits) for s in slots)


def _check_keys(obj: dict, required: set, optional: set, what: str):
    keys = set(obj)
    missing = required - keys
    unknown = keys - required - optional
    if missing:
        raise KbError(f"{what}: missing fields {sorted(missing)}")
    if unknown:
        raise KbError(f"{what}: unknown fields {sorted(unknown)}")


def load_kb(path) -> IsaKb:
    """Load and fully validate a KB JSON file.

    Raises KbError naming the offending entry on any schema violation or
    dangling register reference.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise KbError(f"cannot read KB file {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise KbError(f"{path}: schema violation: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise KbError(f"{path}: schema violation: top level must be an object")

    _check_keys(doc, {"version", "registers", "opcodes"}, {"track_flags"}, f"{path}")
    version = doc["version"]
    if version not in KB_SCHEMA_VERSIONS:
        raise KbError(f"{path}: unsupported KB schema version {version!r}")
    track_flags = doc.get("track_flags", False)
    if not isinstance(track_flags, bool):
        raise KbError(f"{path}: track_flags must be a boolean")

    registers: dict[str, RegisterSpec] = {}
    family_widths: dict[str, set] = {}
    for entry in doc["registers"]:
        _check_keys(entry, {"name", "width_bits", "family", "substitutable"}, set(),
                    f"register entry {entry.get('name', '?')!r}")
        name = entry["name"]
        if not isinstance(name, str) or not name or name != name.lower():
            raise KbError(f"register entry {name!r}: name must be a lowercase token")
        if name in registers:
            raise KbError(f"register {name!r}: duplicate definition")
        if not _is_pow2_width(entry["width_bits"]):
            raise KbError(f"register {name!r}: width_bits must be a power of 2 in [8, 512]")
        family = entry["family"]
        if not isinstance(family, str) or not family:
            raise KbError(f"register {name!r}: family must be a non-empty string")
        if entry["width_bits"] in family_widths.setdefault(family, set()):
            raise KbError(f"register {name!r}: family {family!r} already has a "
                          f"{entry['width_bits']}-bit member")
        family_widths[family].add(entry["width_bits"])
        if not isinstance(entry["substitutable"], bool):
            raise KbError(f"register {name!r}: substitutable must be a boolean")
        registers[name] = RegisterSpec(name, entry["width_bits"], family, entry["substitutable"])

    # one JSON entry per operand form; forms of the same mnemonic are merged
    merged: dict[str, dict] = {}
    for entry in doc["opcodes"]:
        _check_keys(entry, {"mnemonic", "bb_valid", "slots"},
                    {"implicit_reads", "implicit_writes", "throughput"},
                    f"opcode entry {entry.get('mnemonic', '?')!r}")
        mnem = entry["mnemonic"]
        if not isinstance(mnem, str) or not mnem or mnem != mnem.lower():
            raise KbError(f"opcode {mnem!r}: mnemonic must be a lowercase token")
        bb_valid = entry["bb_valid"]
        if not isinstance(bb_valid, bool):
            raise KbError(f"opcode {mnem!r}: bb_valid must be a boolean")
        if bb_valid and (mnem in _CONTROL_FLOW or mnem.startswith("j")):
            raise KbError(f"opcode {mnem!r}: control-flow mnemonics must have bb_valid=false")

        slots = []
        for i, s in enumerate(entry["slots"]):
            _check_keys(s, {"kind", "width_bits", "access"}, set(),
                        f"opcode {mnem!r} slot {i}")
            if s["kind"] not in SLOT_KINDS:
                raise KbError(f"opcode {mnem!r} slot {i}: unknown kind {s['kind']!r}")
            if s["access"] not in ACCESSES:
                raise KbError(f"opcode {mnem!r} slot {i}: unknown access {s['access']!r}")
            if not _is_pow2_width(s["width_bits"]):
                raise KbError(f"opcode {mnem!r} slot {i}: width_bits must be a power of 2 "
                              f"in [8, 512]")
            slots.append(OperandSlot(s["kind"], s["width_bits"], s["access"]))
        slots = tuple(slots)

        reads = entry.get("implicit_reads", [])
        writes = entry.get("implicit_writes", [])
        if not track_flags:
            reads = [r for r in reads if r != _FLAGS_NAME]
            writes = [w for w in writes if w != _FLAGS_NAME]
        for reg in list(reads) + list(writes):
            if reg not in registers:
                raise KbError(f"opcode {mnem!r}: implicit register {reg!r} does not "
                              f"resolve in the register table")
        throughput = entry.get("throughput", {})
        for march, cyc in throughput.items():
            if not isinstance(cyc, (int, float)) or cyc <= 0:
                raise KbError(f"opcode {mnem!r}: throughput for {march!r} must be > 0")

        record = merged.setdefault(mnem, {
            "bb_valid": bb_valid,
            "forms": [],
            "implicit_reads": frozenset(reads),
            "implicit_writes": frozenset(writes),
            "throughput": dict(throughput),
        })
        if record["bb_valid"] != bb_valid:
            raise KbError(f"opcode {mnem!r}: bb_valid differs between forms")
        if (record["implicit_reads"] != frozenset(reads)
                or record["implicit_writes"] != frozenset(writes)):
            raise KbError(f"opcode {mnem!r}: implicit register sets differ between forms")
        if record["throughput"] != dict(throughput):
            raise KbError(f"opcode {mnem!r}: throughput differs between forms")
        if _form_key(slots) in {_form_key(f) for f in record["forms"]}:
            raise KbError(f"opcode {mnem!r}: duplicate operand form {_form_key(slots)}")
        record["forms"].append(slots)

    opcodes = {
        mnem: OpcodeSpec(
            mnemonic=mnem,
            bb_valid=rec["bb_valid"],
            forms=tuple(rec["forms"]),
            implicit_reads=rec["implicit_reads"],
            implicit_writes=rec["implicit_writes"],
            per_arch_throughput=rec["throughput"],
        )
        for mnem, rec in merged.items()
    }
    return IsaKb(version=version, registers=registers, opcodes=opcodes,
                 track_flags=track_flags)


def load_bundled(name: str) -> IsaKb:
    return load_kb(bundled_kb_path(name))


def matching_form(kb: IsaKb, mnemonic: str, signature) -> tuple | None:
    """First form of `mnemonic` matching the syntactic (kind, width) signature."""
    spec = kb.opcodes.get(mnemonic)
    if spec is None:
        return None
    for form in spec.forms:
        if len(form) == len(signature) and all(
                slot.matches(kind, width) for slot, (kind, width) in zip(form, signature)):
            return form
    return None


def replacement_opcodes(kb: IsaKb, mnemonic: str, signature) -> list:
    """Every other bb_valid mnemonic accepting exactly this operand form.

    `signature` is a sequence of (kind, width) pairs as parsed from an
    instruction; it is first resolved against `mnemonic`'s own forms so that
    e.g. lea's bracket operand matches agen slots, never memory ones.
    """
    if mnemonic not in kb.opcodes:
        raise KbError(f"unknown mnemonic {mnemonic!r}")
    form = matching_form(kb, mnemonic, signature)
    if form is None:
        # signature does not fit the opcode; nothing can replace a non-instruction
        return []
    key = _form_key(form)
    out = []
    for other, spec in kb.opcodes.items():
        if other == mnemonic or not spec.bb_valid:
            continue
        if any(_form_key(f) == key for f in spec.forms):
            out.append(other)
    return sorted(out)


def replacement_registers(kb: IsaKb, reg: str, forbidden=frozenset()) -> list:
    """Substitutable same-width rename targets for `reg`.

    Excludes `reg` itself, every register aliasing a member of `forbidden`,
    and everything non-substitutable. A non-substitutable `reg` (the stack
    pointer) has no targets at all.
    """
    spec = kb.registers.get(reg)
    if spec is None:
        raise KbError(f"unknown register {reg!r}")
    if not spec.substitutable:
        return []
    banned_families = set()
    for f in forbidden:
        if f in kb.registers:
            banned_families.add(kb.registers[f].family)
    out = [
        name for name, r in kb.registers.items()
        if r.substitutable and r.width_bits == spec.width_bits and name != reg
        and r.family not in banned_families
    ]
    return sorted(out)


def validate_instruction(kb: IsaKb, instr) -> bool:
    """True iff the mnemonic exists, is bb_valid, and the operands fit a form.

    Never raises; malformed operands simply fail to validate.
    """
    spec = kb.opcodes.get(instr.mnemonic)
    if spec is None or not spec.bb_valid:
        return False
    sig = instruction_signature(kb, instr)
    if sig is None:
        return False
    return matching_form(kb, instr.mnemonic, sig) is not None


def instruction_signature(kb: IsaKb, instr):
    """Syntactic (kind, width) pairs for an instruction's operands.

    Returns None when a register operand is unknown to the KB.
    """
    sig = []
    for op in instr.operands:
        kind = op.kind
        if kind == "register":
            spec = kb.registers.get(op.name)
            if spec is None:
                return None
            sig.append((kind, spec.width_bits))
        else:
            sig.append((kind, op.width_bits))
    return tuple(sig)
