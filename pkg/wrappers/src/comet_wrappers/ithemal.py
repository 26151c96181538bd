"""Ithemal wrapper: assembles the block and runs a configured predictor command.

Ithemal deployments vary (docker image, checked-out repo, saved torch model),
so the invocation is supplied through ITHEMAL_CMD, a template whose {file} and
{arch} placeholders receive the object-file path and the microarchitecture
flag, e.g.:

    ITHEMAL_CMD="python ithemal/predict.py --model-file {arch}.dump --file {file}"
"""

import os
import shlex
import sys
import tempfile

from .protocol import (assemble, emit, fail, march_flag, parse_throughput,
                       read_block, run_tool)


def predict(lines, command_template: str, arch: str) -> float:
    with tempfile.TemporaryDirectory(prefix="comet-ithemal-") as workdir:
        obj = assemble(lines, workdir)
        argv = [part.format(file=obj, arch=arch)
                for part in shlex.split(command_template)]
        out = run_tool(argv)
    return parse_throughput(out)


def main() -> int:
    lines = read_block()
    if not lines:
        return fail("Ithemal wrapper: empty block on stdin")
    template = os.environ.get("ITHEMAL_CMD")
    if not template:
        return fail("Ithemal wrapper: set ITHEMAL_CMD to the predictor command")
    try:
        return emit(predict(lines, template, march_flag()))
    except Exception as exc:
        return fail(f"Ithemal wrapper: {exc}")


if __name__ == "__main__":
    sys.exit(main())
