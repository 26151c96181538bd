"""Wire-protocol conformance of the wrapper scripts.

Covers the secondary acceptance clause: the mock wrapper must survive
external_predict round-trips; the uiCA clause runs only where uiCA exists.
"""

import os
import subprocess
import sys

import pytest

from comet_wrappers import ithemal, protocol, uica

MOCK_ARGV = [sys.executable, "-m", "comet_wrappers.mock"]

CS1_LINES = ["lea rdx, [rax + 1]", "mov qword ptr [rdi + 24], rdx",
             "mov byte ptr [rax], 80", "mov rsi, qword ptr [r14 + 32]",
             "mov rdi, rbp"]


def run_wrapper(argv, text, env=None):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run(argv, input=text, capture_output=True, text=True,
                          env=full_env)


def test_mock_four_lines_is_one_cycle():
    proc = run_wrapper(MOCK_ARGV, "mov rax, 1\nmov rbx, 2\nmov rcx, 3\nmov rdx, 4\n")
    assert proc.returncode == 0
    assert proc.stdout == "1.0\n"


def test_mock_ignores_comments_and_blanks():
    proc = run_wrapper(MOCK_ARGV, "mov rax, 1 ; note\n\n; whole-line comment\n")
    assert proc.returncode == 0
    assert proc.stdout == "0.25\n"


def test_mock_empty_stdin_fails():
    proc = run_wrapper(MOCK_ARGV, "")
    assert proc.returncode == 1
    assert proc.stdout == ""
    assert "empty" in proc.stderr


def test_mock_deterministic():
    text = "\n".join(CS1_LINES) + "\n"
    a = run_wrapper(MOCK_ARGV, text)
    b = run_wrapper(MOCK_ARGV, text)
    assert a.stdout == b.stdout == "1.25\n"


def test_march_flag_mapping(monkeypatch):
    monkeypatch.setenv("COMET_MARCH", "skl")
    assert protocol.march_flag() == "SKL"
    monkeypatch.setenv("COMET_MARCH", "HSW")
    assert protocol.march_flag() == "HSW"
    monkeypatch.delenv("COMET_MARCH")
    assert protocol.march_flag() == "HSW"
    monkeypatch.setenv("COMET_MARCH", "pentium2")
    with pytest.raises(ValueError, match="pentium2"):
        protocol.march_flag()


def test_parse_throughput_formats():
    assert protocol.parse_throughput(
        "Throughput (in cycles per iteration): 36.00\n") == 36.0
    assert protocol.parse_throughput("Combined Throughput: 2.41") == 2.41
    assert protocol.parse_throughput("some log line\n23.0\n") == 23.0
    with pytest.raises(ValueError):
        protocol.parse_throughput("no numbers here")


def test_assembler_roundtrip(tmp_path):
    obj = protocol.assemble(CS1_LINES, str(tmp_path))
    assert os.path.getsize(obj) > 0


def test_assembler_rejects_garbage(tmp_path):
    with pytest.raises(RuntimeError, match="assembler"):
        protocol.assemble(["frobnicate rax"], str(tmp_path))


def test_uica_wrapper_without_tool(monkeypatch):
    monkeypatch.delenv("UICA_PATH", raising=False)
    monkeypatch.setattr(uica, "find_uica", lambda: None)
    monkeypatch.setattr("sys.stdin", _FakeStdin("mov rax, 1\n"))
    assert uica.main() == 1


def test_ithemal_wrapper_without_command(monkeypatch):
    monkeypatch.delenv("ITHEMAL_CMD", raising=False)
    monkeypatch.setattr("sys.stdin", _FakeStdin("mov rax, 1\n"))
    assert ithemal.main() == 1


def test_ithemal_template_invocation(tmp_path, monkeypatch):
    fake = tmp_path / "fake_predictor.py"
    fake.write_text("import sys\nprint('loading model...')\nprint('23.0')\n")
    template = f"{sys.executable} {fake} --file {{file}} --arch {{arch}}"
    value = ithemal.predict(["mov rax, 1"], template, "HSW")
    assert value == 23.0


class _FakeStdin:
    def __init__(self, text):
        self._text = text

    def read(self):
        return self._text


# --- secondary acceptance: protocol round-trips through the explainer -------

def test_acceptance_10_mock_roundtrips_20_blocks():
    from comet import rng as rngmod
    from comet.asm import parse_block
    from comet.graph import FeatureSet, build_graph
    from comet.kb import load_bundled
    from comet.models import external_predict
    from comet.perturb import PerturbConfig, make_plan, sample_from_plan

    kb = load_bundled("isa_core")
    seed_block = parse_block("\n".join(CS1_LINES), kb)
    plan = make_plan(kb, build_graph(kb, seed_block), FeatureSet())
    stream = rngmod.stream(10, "wrap")
    checked = 0
    for _ in range(20):
        blk = sample_from_plan(plan, PerturbConfig(), stream).block
        value = external_predict(MOCK_ARGV, 30.0, blk, march="hsw")
        assert value == pytest.approx(0.25 * len(blk.instructions))
        checked += 1
    print(f"\nACCEPTANCE 10 (wire-protocol conformance): PASS "
          f"{checked} mock round-trips")
    assert checked == 20


@pytest.mark.skipif(uica.find_uica() is None, reason="uiCA not installed")
def test_acceptance_10_uica_case_study_1():
    proc = run_wrapper([sys.executable, "-m", "comet_wrappers.uica"],
                       "\n".join(CS1_LINES) + "\n", env={"COMET_MARCH": "hsw"})
    assert proc.returncode == 0
    assert float(proc.stdout.strip()) == 2.0
