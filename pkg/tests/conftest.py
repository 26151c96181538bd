import pytest

from comet import kb as kbmod
from comet.asm import parse_block
from comet.models import bundled_cost_table

CS1_TEXT = """lea rdx, [rax + 1]
mov qword ptr [rdi + 24], rdx
mov byte ptr [rax], 80
mov rsi, qword ptr [r14 + 32]
mov rdi, rbp
"""

CS2_TEXT = """mov ecx, edx
xor edx, edx
lea rax, [rcx + rax - 1]
div rcx
mov rdx, rcx
imul rax, rcx
"""

# four instructions ending in a stack pop, matching the running overview example
FIG1_TEXT = """add rax, rbx
mov rcx, qword ptr [rdx]
sub rcx, rax
pop rbx
"""

B1_TEXT = """vdivss xmm0, xmm0, xmm6
vmulss xmm7, xmm0, xmm0
vxorps xmm0, xmm0, xmm5
vaddss xmm7, xmm7, xmm3
vmulss xmm6, xmm6, xmm7
vdivss xmm6, xmm3, xmm6
vmulss xmm0, xmm6, xmm0
"""

B2_TEXT = """shl eax, 3
imul rax, r15
xor edx, edx
add rax, 7
shr rax, 3
lea rax, [rbp + rax - 1]
div rbp
imul rax, rbp
mov rbp, qword ptr [rsp + 8]
sub rbp, rax
"""


@pytest.fixture(scope="session")
def core():
    return kbmod.load_bundled("isa_core")


@pytest.fixture(scope="session")
def tiny():
    return kbmod.load_bundled("isa_tiny")


@pytest.fixture(scope="session")
def hsw():
    return bundled_cost_table("hsw")


@pytest.fixture(scope="session")
def skl():
    return bundled_cost_table("skl")


@pytest.fixture(scope="session")
def cs1(core):
    return parse_block(CS1_TEXT, core)


@pytest.fixture(scope="session")
def cs2(core):
    return parse_block(CS2_TEXT, core)


@pytest.fixture(scope="session")
def fig1(core):
    return parse_block(FIG1_TEXT, core)


@pytest.fixture(scope="session")
def b1(core):
    return parse_block(B1_TEXT, core)
