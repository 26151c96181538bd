"""uiCA wrapper: assembles the block and asks uiCA for its throughput.

Needs uiCA installed; point UICA_PATH at uiCA.py (or have `uica.py` on PATH).
"""

import os
import shutil
import sys
import tempfile

from .protocol import (assemble, emit, fail, march_flag, parse_throughput,
                       read_block, run_tool)


def find_uica() -> str | None:
    candidate = os.environ.get("UICA_PATH")
    if candidate and os.path.exists(candidate):
        return candidate
    return shutil.which("uica.py") or shutil.which("uiCA.py")


def predict(lines, uica_path: str, arch: str) -> float:
    with tempfile.TemporaryDirectory(prefix="comet-uica-") as workdir:
        obj = assemble(lines, workdir)
        out = run_tool([sys.executable, uica_path, obj, "-arch", arch])
    return parse_throughput(out)


def main() -> int:
    lines = read_block()
    if not lines:
        return fail("uiCA wrapper: empty block on stdin")
    uica_path = find_uica()
    if uica_path is None:
        return fail("uiCA wrapper: uiCA not found (set UICA_PATH)")
    try:
        return emit(predict(lines, uica_path, march_flag()))
    except Exception as exc:
        return fail(f"uiCA wrapper: {exc}")


if __name__ == "__main__":
    sys.exit(main())
