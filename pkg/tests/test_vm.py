from fractions import Fraction

import numpy as np
import pytest

from macmap.dtypes import parse_dtype
from macmap.errors import MissingInput, ShapeError, UnknownIntrinsic
from macmap.intrinsics import builtin
from macmap.pipeline import random_inputs, tensorize
from macmap.rewriter import lower
from macmap.tensor_ir import parse_compute
from macmap.vm import backend, values
from macmap.vm.cost import CostReport, static_cost
from macmap.vm.engine import eval_tir, measure, run_and_measure
from macmap.vm.reference import eval_reference
from macmap.vm.values import TensorValue
from macmap.workloads import matmul_op_for, matmul_tdsl

I8, I32, F16, F32 = (parse_dtype(n) for n in ("i8", "i32", "f16", "f32"))

MM2 = """\
tensor A : i8[2, 2] input
tensor B : i8[2, 2] input
tensor C : i32[2, 2] output
loop x : dp 2
loop y : dp 2
loop k : red 2
C[x, y] += cast<i32>(A[x, k]) * cast<i32>(B[k, y])
"""


def mm2_inputs(a, b, c=None):
    return {
        "A": TensorValue.from_array(a, I8),
        "B": TensorValue.from_array(b, I8),
        "C": TensorValue.from_array(np.zeros((2, 2)) if c is None else c, I32),
    }


def test_reference_hand_matmul():
    op = parse_compute(MM2)
    out = eval_reference(op, mm2_inputs([[1, 2], [3, 4]], [[5, 6], [7, 8]]))
    assert out.array().tolist() == [[19, 22], [43, 50]]


def test_reference_zero_inputs():
    op = parse_compute(MM2)
    out = eval_reference(op, mm2_inputs(np.zeros((2, 2)), np.zeros((2, 2))))
    assert not out.data.any()


def test_reference_shape_and_missing_errors():
    op = parse_compute(MM2)
    ins = mm2_inputs([[1, 2], [3, 4]], [[5, 6], [7, 8]])
    with pytest.raises(ShapeError):
        eval_reference(op, {**ins, "A": TensorValue.from_array([1, 2, 3], I8)})
    del ins["B"]
    with pytest.raises(MissingInput):
        eval_reference(op, ins)


def test_integer_wraparound():
    op = parse_compute(MM2)
    big = np.full((2, 2), 2**31 - 1)
    out = eval_reference(op, mm2_inputs([[1, 0], [0, 1]], [[1, 0], [0, 1]], big))
    assert out.array()[0, 0] == -(2**31)  # wraps, no trap
    assert out.array()[0, 1] == 2**31 - 1


def test_reference_matches_numpy(rng):
    op = parse_compute(matmul_tdsl(5, 7, 9))
    ins = random_inputs(op, rng)
    want = ins["C"].array() + ins["A"].array().astype(np.int64) @ ins["B"].array().astype(np.int64)
    want = ((want + 2**31) % 2**32) - 2**31
    assert (eval_reference(op, ins).array() == want).all()


def test_lowered_matches_reference(rng):
    op = parse_compute(matmul_tdsl(6, 5, 4))
    ins = random_inputs(op, rng)
    assert eval_tir(lower(op), ins).equals(eval_reference(op, ins))


def test_unknown_intrinsic(rng):
    op = parse_compute(matmul_tdsl(16, 16, 16))
    res = tensorize(op, builtin("vdot_16x4"))
    with pytest.raises(UnknownIntrinsic):
        eval_tir(res.tir, random_inputs(op, rng), registry={})


def test_cost_scalar_matmul(matmul16, rng):
    rep = measure(lower(matmul16), random_inputs(matmul16, rng))
    assert rep.scalar_mac_count == 4096 and rep.total_calls == 0


@pytest.mark.parametrize("name,calls", [("vdot_16x4", 64), ("wmma_16x16x16", 1)])
def test_cost_tensorized_calls(name, calls, rng):
    intr = builtin(name)
    op = matmul_op_for(16, 16, 16, intr)
    res = tensorize(op, intr)
    rep = measure(res.tir, random_inputs(op, rng), res.registry)
    assert rep.intrinsic_call_count == {name: calls}
    assert rep.scalar_mac_count == 0
    assert rep.total_calls * intr.lanes * intr.reduction_width == 4096


def test_static_cost_equals_dynamic(matmul16, rng):
    res = tensorize(matmul16, builtin("vdot_16x4"))
    dyn = measure(res.tir, random_inputs(matmul16, rng), res.registry)
    assert static_cost(res.tir) == dyn


def test_determinism(matmul16):
    res = tensorize(matmul16, builtin("vdot_16x4"))
    a = run_and_measure(res.tir, random_inputs(matmul16, np.random.default_rng(5)), res.registry)
    b = run_and_measure(res.tir, random_inputs(matmul16, np.random.default_rng(5)), res.registry)
    assert a[0].equals(b[0]) and a[1] == b[1]


def test_cost_report_forms():
    rep = CostReport(10, {"x": 2}, 3, 4, 1, 5, 2)
    assert CostReport.from_dict(rep.to_dict()) == rep
    import json

    assert CostReport.from_dict(json.loads(rep.to_json())) == rep
    assert "intrinsic_call_count.x=2" in rep.to_text()
    assert rep.cost_tuple() == (3, -5, 5)


@pytest.mark.parametrize("dt", ["i8", "u8", "i32", "f16", "f32"])
def test_tensor_files_round_trip(dt, tmp_path, rng):
    t = TensorValue.random(parse_dtype(dt), (3, 4), rng)
    for suffix in (".bin", ".txt"):
        p = tmp_path / f"t{suffix}"
        values.save(t, p)
        assert values.load(p).equals(t)


def test_tensor_file_corrupt(tmp_path, rng):
    t = TensorValue.random(I32, (4,), rng)
    raw = values.to_bytes(t)
    with pytest.raises(ValueError):
        values.from_bytes(raw[:-1])
    with pytest.raises(ValueError):
        values.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ShapeError):
        values.from_text("i32 [3]\n1 2\n")


def test_buffer_length_invariant():
    with pytest.raises(ShapeError):
        TensorValue(I32, (2, 2), np.zeros(3, dtype=I32.storage))


# ---------------------------------------------------------------- fp16

F16_MUL = """\
tensor A : f16[{n}] input
tensor B : f16[{n}] input
tensor C : f16[{n}] output
loop i : dp {n}
C[i] = A[i] * B[i]
"""

# (a, b, a*b) in binary16, round-to-nearest-even
F16_VECTORS = [
    (1.0, 1.0, 1.0),
    (-2.0, 0.5, -1.0),
    (65504.0, 1.0, 65504.0),  # largest finite
    (65504.0, 2.0, float("inf")),  # overflow
    (2.0**-14, 2.0**-1, 2.0**-15),  # normal -> subnormal, exact
    (2.0**-24, 0.5, 0.0),  # half of the smallest subnormal: tie to even (0)
    (2.0**-24, 1.5, 2.0**-23),  # 1.5 ulp: tie to even (2 ulp)
    (2.0**-24, 2.5, 2.0**-23),  # 2.5 ulp: tie to even (2 ulp)
    (1 + 2.0**-10, 1 + 2.0**-10, 1 + 2.0**-9),  # 1 + 2^-9 + 2^-20 rounds down
    (1 + 2.0**-10, 1 + 2.0**-9, 1 + 2.0**-10 + 2.0**-9),  # tail below half ulp
    (1 + 3 * 2.0**-10, 1.5, 1.5 + 4 * 2.0**-10),  # 1.5 + 4.5 ulp: tie to even (4)
    (0.1, 3.0, 0.2998046875),  # f16(0.1) * 3 = 1228.5 ulp: tie to even
    (-0.0, 5.0, -0.0),
]


def _rne16(x: Fraction) -> float:
    """Independent round-to-nearest-even of an exact rational to binary16."""
    if x == 0:
        return 0.0
    sign = -1 if x < 0 else 1
    x = abs(x)
    e = 15
    while Fraction(2) ** e > x:
        e -= 1
    e = max(e, -14)  # subnormal range shares the smallest exponent
    ulp = Fraction(2) ** (e - 10)
    q, r = divmod(x, ulp)
    if r * 2 > ulp or (r * 2 == ulp and q % 2 == 1):
        q += 1
    v = q * ulp
    return sign * (float("inf") if v > 65504 else float(v))


def test_fp16_vectors_agree_with_exact_rounding():
    for a, b, want in F16_VECTORS:
        fa, fb = float(np.float16(a)), float(np.float16(b))
        got = _rne16(Fraction(fa) * Fraction(fb))
        assert got == want or (got == 0 and want == 0)


@pytest.mark.parametrize("which", ["compiled", "python"])
def test_fp16_mul_matches_vectors(which):
    if which == "compiled" and not backend.compiled_available():
        pytest.skip("compiled kernels not built")
    op = parse_compute(F16_MUL.format(n=len(F16_VECTORS)))
    a, b, want = zip(*F16_VECTORS)
    ins = {"A": TensorValue.from_array(np.array(a), F16), "B": TensorValue.from_array(np.array(b), F16)}
    prev = backend.name()
    backend.use(which)
    try:
        ref = eval_reference(op, ins).data.astype(np.float64)
        tir = eval_tir(lower(op), ins).data.astype(np.float64)
    finally:
        backend.use(prev)
    assert ref.tolist() == list(want)
    assert tir.tolist() == list(want)
    assert np.signbit(ref[-1])


def test_fp16_random_products_exact(rng):
    n = 512
    op = parse_compute(F16_MUL.format(n=n))
    ins = {"A": TensorValue.random(F16, (n,), rng), "B": TensorValue.random(F16, (n,), rng)}
    out = eval_reference(op, ins).data.astype(np.float64)
    a, b = ins["A"].data.astype(np.float64), ins["B"].data.astype(np.float64)
    want = [_rne16(Fraction(x) * Fraction(y)) for x, y in zip(a, b)]
    assert out.tolist() == want


# ---------------------------------------------------------------- backends


@pytest.mark.skipif(not backend.compiled_available(), reason="compiled kernels not built")
@pytest.mark.parametrize("name", ["vdot_16x4", "wmma_16x16x16"])
def test_backends_agree(name, rng):
    intr = builtin(name)
    op = matmul_op_for(32, 16, 32, intr)
    res = tensorize(op, intr)
    ins = random_inputs(op, rng)
    outs = []
    prev = backend.name()
    for which in ("compiled", "python"):
        backend.use(which)
        outs.append(run_and_measure(res.tir, ins, res.registry))
    backend.use(prev)
    assert outs[0][0].equals(outs[1][0]) and outs[0][1] == outs[1][1]


def test_backend_selection():
    assert backend.name() in ("compiled", "python")
    with pytest.raises(ValueError):
        backend.use("gpu")


def test_float_call_batching_matches_sequential(rng, monkeypatch):
    from macmap.vm.engine import Executor
    from macmap.workloads import WorkloadSpec, conv_op_for

    intr = builtin("wmma_16x16x16")
    op = conv_op_for(WorkloadSpec("c", 32, 16, 16, 1, 1, 16), intr)
    res = tensorize(op, intr)
    ins = random_inputs(op, rng)
    batched = eval_tir(res.tir, ins, res.registry)
    monkeypatch.setattr(Executor, "_waves", staticmethod(lambda *a: None))
    sequential = eval_tir(res.tir, ins, res.registry)
    assert batched.equals(sequential)


@pytest.mark.skipif(not backend.compiled_available(), reason="compiled kernels not built")
@pytest.mark.parametrize("addend", [0x0001, 0x3C00, 0x8400, 0x7BFF, 0x03FF, 0x3555])
def test_f16_accumulate_all_bit_patterns(addend):
    # every binary16 value plus a fixed addend: compiled and numpy kernels agree
    base = np.arange(65536, dtype=np.uint16)
    idx = np.arange(65536, dtype=np.int64)
    vals = np.full(65536, addend, dtype=np.uint16)
    outs = []
    prev = backend.name()
    try:
        for which in ("compiled", "python"):
            backend.use(which)
            buf = base.copy().view(np.float16)
            backend.scatter_accumulate(buf, idx, vals.view(np.float16), F16)
            outs.append(buf)
    finally:
        backend.use(prev)
    assert np.array_equal(outs[0], outs[1], equal_nan=True)


@pytest.mark.skipif(not backend.compiled_available(), reason="compiled kernels not built")
@pytest.mark.parametrize("bits,signed", [(8, True), (8, False), (32, True), (16, False)])
@pytest.mark.parametrize("size", [4, 4096])
def test_int_accumulate_backends_agree(bits, signed, size, rng):
    idx = rng.integers(0, size, 1000, dtype=np.int64)
    vals = rng.integers(-(2**40), 2**40, 1000, dtype=np.int64)
    dt = parse_dtype(f"{'i' if signed else 'u'}{bits}")
    outs = []
    prev = backend.name()
    try:
        for which in ("compiled", "python"):
            backend.use(which)
            buf = np.zeros(size, dtype=np.int64)
            backend.scatter_accumulate(buf, idx, vals, dt)
            outs.append(buf)
    finally:
        backend.use(prev)
    assert np.array_equal(outs[0], outs[1])
    assert outs[0].min() >= dt.min and outs[0].max() <= dt.max
