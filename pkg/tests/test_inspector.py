
import pytest

from conftest import ELTWISE_SRC, VNNI_SRC
from oracles import brute_force_mappings
from macmap.inspector import (
    BindMap,
    LoopMapping,
    NotIsomorphic,
    check_feasible,
    enumerate_mappings,
    inspect_compute,
    inspect_op,
    select_mapping,
)
from macmap.intrinsics import builtin
from macmap.tensor_ir import parse_compute
from macmap.workloads import WorkloadSpec, conv_blocked_tdsl, matmul_tdsl

VDOT = builtin("vdot_16x4")
WMMA = builtin("wmma_16x16x16")


def test_identity_match_binds_each_leaf_to_itself():
    body = VDOT.semantics.store.value
    bind = inspect_compute(body, body)
    assert isinstance(bind, BindMap)
    assert all(a == b for a, b in bind.pairs)
    assert len(bind.pairs) == 3


def test_conv_blocked_binds_data_kernel_acc():
    op = parse_compute(conv_blocked_tdsl(WorkloadSpec("c", 8, 6, 32, 3, 1, 4), 16, 4))
    bind = inspect_op(op, VDOT)
    assert bind.tensors() == {"c": "out", "a": "data", "b": "kernel"}


def test_fp32_matmul_vs_vdot_not_isomorphic():
    src = matmul_tdsl(16, 16, 16).replace("u8", "f32").replace("i8", "f32").replace("i32", "f32")
    res = inspect_op(parse_compute(src), VDOT)
    assert isinstance(res, NotIsomorphic)
    assert "dtype" in res.reason


def test_register_cannot_bind_two_sources():
    instr = parse_compute(
        "tensor a : u8[4] input\ntensor c : i32[1] output\nloop j : red 4\n"
        "c[0] += cast<i32>(a[j]) * cast<i32>(a[j])\n"
    )
    op = parse_compute(
        "tensor A : u8[4] input\ntensor B : u8[4] input\ntensor C : i32[1] output\nloop j : red 4\n"
        "C[0] += cast<i32>(A[j]) * cast<i32>(B[j])\n"
    )
    res = inspect_compute(instr.store.value, op.store.value)
    assert isinstance(res, NotIsomorphic) and "already bound" in res.reason


def test_matmul_vs_vdot_mappings():
    op = parse_compute(matmul_tdsl(16, 16, 16))
    ms = enumerate_mappings(op, VDOT)
    assert [m.describe() for m in ms] == ["{y->i, k->j}", "{x->i, k->j}"]
    assert ms[0].broadcast == (("a", ("i",)),)
    assert ms[1].broadcast == (("b", ("i",)),)
    assert not any(m.needs_padding for m in ms)


def test_conv_mapping_inner_channels():
    op = parse_compute(conv_blocked_tdsl(WorkloadSpec("c", 8, 6, 32, 3, 1, 4), 16, 4))
    ms = enumerate_mappings(op, VDOT)
    assert ms[0].describe() == "{ki->i, ci->j}"
    assert select_mapping(ms) is ms[0]


def test_eltwise_has_no_mapping():
    assert enumerate_mappings(parse_compute(ELTWISE_SRC), VDOT) == []


def test_wmma_swapped_mapping_infeasible():
    op = parse_compute(
        "tensor A : f16[16, 16] input\ntensor B : f16[16, 16] input\ntensor C : f32[16, 16] output\n"
        "loop i : dp 16\nloop j : dp 16\nloop k : red 16\n"
        "C[i, j] += cast<f32>(A[i, k]) * cast<f32>(B[k, j])\n"
    )
    bind = inspect_op(op, WMMA)
    swapped = LoopMapping((("j", "x"), ("i", "y"), ("k", "k")), bind, extents=(16, 16, 16))
    straight = LoopMapping((("i", "x"), ("j", "y"), ("k", "k")), bind, extents=(16, 16, 16))
    assert not check_feasible(op, WMMA, swapped)
    assert check_feasible(op, WMMA, straight)
    assert [m.describe() for m in enumerate_mappings(op, WMMA)] == ["{i->x, j->y, k->k}"]


def test_wmma_needs_update_form():
    op = parse_compute(
        "tensor A : f16[16, 16] input\ntensor B : f16[16, 16] input\ntensor C : f32[16, 16] output\n"
        "loop i : dp 16\nloop j : dp 16\nloop k : red 16\n"
        "C[i, j] = 0.0 + cast<f32>(A[i, k]) * cast<f32>(B[k, j])\n"
    )
    assert isinstance(inspect_op(op, WMMA), NotIsomorphic)


def test_wmma_rejects_int_matmul():
    assert isinstance(inspect_op(parse_compute(matmul_tdsl(16, 16, 16)), WMMA), NotIsomorphic)


def test_constant_operand_skipped():
    op = parse_compute(
        "tensor A : u8[16, 8] input\ntensor C : i32[16] output\nloop y : dp 16\nloop k : red 8\n"
        "C[y] += cast<i32>(A[y, k]) * cast<i32>(cast<i8>(3))\n"
    )
    assert [m.describe() for m in enumerate_mappings(op, VDOT)] == ["{y->i, k->j}"]


def test_commutative_normalization():
    op = parse_compute(
        "tensor A : u8[16, 8] input\ntensor B : i8[8, 16] input\ntensor C : i32[16, 16] output\n"
        "loop x : dp 16\nloop y : dp 16\nloop k : red 8\n"
        "C[x, y] += cast<i32>(B[k, y]) * cast<i32>(A[x, k])\n"
    )
    assert isinstance(inspect_op(op, VDOT), NotIsomorphic)
    assert isinstance(inspect_op(op, VDOT, commutative=True), BindMap)


def test_padding_flag():
    op = parse_compute(matmul_tdsl(16, 10, 6))
    ms = enumerate_mappings(op, VDOT)
    assert ms and all(m.needs_padding for m in ms)
    assert select_mapping(ms) is None
    assert select_mapping(ms, allow_pad=True) is ms[0]


@pytest.mark.parametrize("shape", [(16, 16, 16), (32, 16, 8), (4, 4, 4)])
def test_matches_brute_force(shape):
    op = parse_compute(matmul_tdsl(*shape))
    bind = inspect_op(op, VDOT)
    got = {frozenset(m.f) for m in enumerate_mappings(op, VDOT, bind)}
    assert got == brute_force_mappings(op, VDOT, bind)


def test_deterministic():
    op = parse_compute(VNNI_SRC)
    assert enumerate_mappings(op, VDOT) == enumerate_mappings(op, VDOT)


def test_padded_selection_prefers_least_growth():
    from macmap.workloads import WorkloadSpec, conv_plain_tdsl

    op = parse_compute(conv_plain_tdsl(WorkloadSpec("c", 10, 4, 16, 3, 1, 2)))
    ms = enumerate_mappings(op, VDOT)
    assert all(m.needs_padding for m in ms)
    best = select_mapping(ms, allow_pad=True, op=op)
    assert best.describe() == "{k->i, c->j}"
