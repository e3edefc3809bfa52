import numpy as np
import pytest

from macmap.tensor_ir import parse_compute
from macmap.workloads import matmul_tdsl

VNNI_SRC = """\
tensor a : u8[64] input
tensor b : i8[64] input
tensor c : i32[16] input
tensor d : i32[16] output
loop i : dp 16
loop j : red 4
d[i] = c[i] + cast<i32>(a[i * 4 + j]) * cast<i32>(b[i * 4 + j])
"""

ELTWISE_SRC = """\
tensor A : i32[16] input
tensor B : i32[16] input
tensor C : i32[16] output
loop i : dp 16
C[i] = A[i] + B[i]
"""


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def matmul16():
    return parse_compute(matmul_tdsl(16, 16, 16))


def random_inputs(op, rng):
    from macmap.pipeline import random_inputs as ri

    return ri(op, rng)
