"""Shared plumbing for the wire protocol.

A wrapper reads one basic block as text on stdin (until EOF), prints exactly
one positive decimal line on stdout, and exits 0. Any failure exits 1 with a
diagnostic on stderr. The target microarchitecture arrives in the COMET_MARCH
environment variable.
"""

import os
import re
import subprocess
import sys

MARCH_FLAGS = {"hsw": "HSW", "skl": "SKL", "ivb": "IVB", "snb": "SNB",
               "adl": "ADL", "icl": "ICL"}

_THROUGHPUT_RE = re.compile(r"Throughput[^:]*:\s*([0-9]+(?:\.[0-9]+)?)")


def read_block() -> list:
    """Instruction lines from stdin; comments and blanks dropped."""
    text = sys.stdin.read()
    lines = []
    for raw in text.splitlines():
        line = raw.split(";", 1)[0].strip()
        if line:
            lines.append(line)
    return lines


def fail(message: str) -> int:
    print(message, file=sys.stderr)
    return 1


def emit(value: float) -> int:
    print(float(value))
    return 0


def march_flag() -> str:
    label = os.environ.get("COMET_MARCH", "hsw").lower()
    if label not in MARCH_FLAGS:
        raise ValueError(f"unknown COMET_MARCH label {label!r}; "
                         f"known: {sorted(MARCH_FLAGS)}")
    return MARCH_FLAGS[label]


def parse_throughput(output: str) -> float:
    """Extract the predicted cycles from a tool's report."""
    m = _THROUGHPUT_RE.search(output)
    if m:
        return float(m.group(1))
    # fall back to the last bare number line (Ithemal prints just a float)
    for line in reversed(output.strip().splitlines()):
        line = line.strip()
        if re.fullmatch(r"[0-9]+(?:\.[0-9]+)?", line):
            return float(line)
    raise ValueError(f"no throughput value in tool output: {output[:200]!r}")


def assemble(lines, workdir) -> str:
    """Assemble Intel-syntax lines into an object file with GNU as."""
    asm_path = os.path.join(workdir, "block.s")
    obj_path = os.path.join(workdir, "block.o")
    with open(asm_path, "w") as fh:
        fh.write(".intel_syntax noprefix\n")
        for line in lines:
            fh.write(line + "\n")
    proc = subprocess.run(["as", asm_path, "-o", obj_path],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"assembler failed: {proc.stderr.strip()}")
    return obj_path


def run_tool(argv, timeout: float = 120.0) -> str:
    proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
    if proc.returncode != 0:
        raise RuntimeError(f"{argv[0]} exited {proc.returncode}: "
                           f"{proc.stderr.strip()[:300]}")
    return proc.stdout
