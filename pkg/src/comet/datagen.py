"""Deterministic synthetic fixture dataset.

Generates desk-scale basic blocks (4-10 instructions) across the six block
categories, with synthetic measured-throughput stand-ins derived from the
bundled crude cost tables. The same seed always regenerates identical bytes.
"""

import json

from . import rng as rngmod
from .asm import parse_block
from .graph import build_graph
from .models import bundled_cost_table, crude_predict

GP64 = ["rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp",
        "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15"]
XMM = [f"xmm{i}" for i in range(8)]

CATEGORIES = ("scalar", "vector", "scalar/vector", "load", "store", "load/store")

_SCALAR_RR = ["mov", "add", "sub", "xor", "and", "or", "imul"]
_SCALAR_RI = ["add", "sub", "and", "or", "shl", "shr", "mov"]
_VECTOR = ["vaddss", "vsubss", "vmulss", "vminss", "vmaxss", "vxorps", "vandps",
           "vorps", "vaddsd", "vmulsd"]


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _scalar_line(rng) -> str:
    roll = rng.random()
    if roll < 0.45:
        return f"{_pick(rng, _SCALAR_RR)} {_pick(rng, GP64)}, {_pick(rng, GP64)}"
    if roll < 0.8:
        return f"{_pick(rng, _SCALAR_RI)} {_pick(rng, GP64)}, {int(rng.integers(1, 64))}"
    return f"lea {_pick(rng, GP64)}, [{_pick(rng, GP64)} + {int(rng.integers(1, 64))}]"


def _vector_line(rng) -> str:
    return (f"{_pick(rng, _VECTOR)} {_pick(rng, XMM)}, {_pick(rng, XMM)}, "
            f"{_pick(rng, XMM)}")


def _load_line(rng) -> str:
    return (f"mov {_pick(rng, GP64)}, qword ptr [{_pick(rng, GP64)} + "
            f"{8 * int(rng.integers(0, 8))}]")


def _store_line(rng) -> str:
    if rng.random() < 0.5:
        return (f"mov qword ptr [{_pick(rng, GP64)} + {8 * int(rng.integers(0, 8))}], "
                f"{_pick(rng, GP64)}")
    return (f"mov byte ptr [{_pick(rng, GP64)} + {int(rng.integers(0, 32))}], "
            f"{int(rng.integers(0, 128))}")


def _line_for(category: str, rng) -> str:
    if category == "scalar":
        return _scalar_line(rng)
    if category == "vector":
        return _vector_line(rng)
    if category == "scalar/vector":
        return _vector_line(rng) if rng.random() < 0.5 else _scalar_line(rng)
    if category == "load":
        return _load_line(rng) if rng.random() < 0.45 else _scalar_line(rng)
    if category == "store":
        return _store_line(rng) if rng.random() < 0.45 else _scalar_line(rng)
    return ({True: _load_line, False: _store_line}[rng.random() < 0.5](rng)
            if rng.random() < 0.6 else _scalar_line(rng))


def generate_fixtures(kb, seed: int = 2024, per_category: int = 9) -> list:
    """Fixture records as JSON-ready dicts, deterministic in `seed`."""
    tables = {m: bundled_cost_table(m) for m in ("hsw", "skl")}
    records = []
    idx = 0
    # vector-heavy categories stay large so the count term dominates cleanly;
    # scalar/memory categories mix in small blocks whose ground truth is
    # dependency- or instruction-dominated
    size_menu = (8, 9, 10, 7, 8, 10, 9, 4, 8, 10, 6, 9)
    vec_menu = (8, 9, 10, 9, 8, 10, 9, 10, 8, 9, 10, 8)
    for category in CATEGORIES:
        menu = vec_menu if "vector" in category else size_menu
        for k in range(per_category):
            rng = rngmod.stream(seed, "fixture", category, k)
            size = menu[k % len(menu)]
            lines: list = []
            guard = 0
            while len(lines) < size:
                line = _line_for(category, rng)
                guard += 1
                if guard > 200:
                    raise RuntimeError("fixture generation stalled")
                if line in lines:
                    continue
                lines.append(line)
            # one expensive-division block apiece in two categories
            if category == "scalar" and k == per_category - 1:
                lines[size // 2] = f"div {_pick(rng, GP64)}"
            if category == "vector" and k == per_category - 1:
                lines[size // 2] = (f"vdivss {_pick(rng, XMM)}, {_pick(rng, XMM)}, "
                                    f"{_pick(rng, XMM)}")
            block = parse_block("\n".join(lines), kb)
            g = build_graph(kb, block)
            measured = {m: round(crude_predict(tables[m], g), 2)
                        for m in ("hsw", "skl")}
            records.append({
                "id": f"fx{idx:03d}",
                "asm": lines,
                "measured": measured,
                "source": "alpha" if idx % 2 == 0 else "beta",
                "category": category,
            })
            idx += 1
    return records


def write_fixtures(path, kb, seed: int = 2024, per_category: int = 9) -> int:
    records = generate_fixtures(kb, seed=seed, per_category=per_category)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return len(records)
