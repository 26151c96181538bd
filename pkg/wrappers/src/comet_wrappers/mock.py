"""Deterministic mock model: 0.25 cycles per instruction.

Useful for protocol conformance tests and as a template for new wrappers.
"""

import sys

from .protocol import emit, fail, read_block


def predict(lines) -> float:
    return 0.25 * len(lines)


def main() -> int:
    lines = read_block()
    if not lines:
        return fail("mock model: empty block on stdin")
    return emit(predict(lines))


if __name__ == "__main__":
    sys.exit(main())
