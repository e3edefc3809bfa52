"""Acceptance suite: one test per criterion, each printing one PASS/FAIL line."""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from macmap.errors import DivisibilityError
from macmap.inspector import BindMap, NotIsomorphic, enumerate_mappings, feasibility, inspect_op
from macmap.intrinsics import builtin, load_intrinsic
from macmap.pipeline import random_inputs, tensorize, verify
from macmap.rewriter import apply_schedule, inject_intrinsic, lower, tile_and_reorder
from macmap.rewriter.sketches import outer_dp_loops, region_sizes
from macmap.tensor_ir import parse_compute
from macmap.tensor_ir.tir import BroadcastVec, ConcatVec, IntrinsicCallStmt, Ramp, VLoad, format_tir, iter_stmts
from macmap.tuner import enumerate_cpu_space, tune
from macmap.vm.cost import static_cost
from macmap.vm.engine import eval_tir, measure
from macmap.vm.reference import eval_reference
from macmap.workloads import TABLE1, WorkloadSpec, conv_blocked_tdsl, conv_op_for, matmul_op_for, matmul_tdsl

from conftest import ELTWISE_SRC
from oracles import brute_force_mappings
from schedgen import random_plain_schedule, random_tensorized

HERE = Path(__file__).parent
BUILTINS = ("vdot_16x4", "vdot_4x4", "wmma_16x16x16")
NEW_INTRINSIC = HERE / "data" / "vdot_8x2.intr"


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return emit


# ------------------------------------------------------------ workloads


def is_matrix(intr):
    return len(intr.semantics.output.shape) == 2


def differential_ops(intr):
    """matmul, conv2d and conv3d sized to the intrinsic's registers."""
    if is_matrix(intr):
        conv2 = WorkloadSpec("c2", 16, 18, 16, 3, 1, 16)
        conv3 = WorkloadSpec("c3", 16, 16, 16, 1, 1, 16, D=2)
    else:
        c, k = 2 * intr.reduction_width, 2 * intr.lanes
        conv2 = WorkloadSpec("c2", c, 6, k, 3, 1, 4)
        conv3 = WorkloadSpec("c3", c, 4, k, 3, 1, 2, D=2)
    return {
        "matmul": matmul_op_for(32, 32, 32, intr),
        "conv2d": conv_op_for(conv2, intr),
        "conv3d": conv_op_for(conv3, intr),
    }


def soundness(intr, kinds=("matmul", "conv2d", "conv3d"), trials=50):
    """Default mapping + default-first CPU sketch, checked over ``trials`` seeded inputs."""
    rtol = 1e-3 if intr.semantics.output.dtype.is_float else 0.0
    results = {}
    for kind, op in differential_ops(intr).items():
        if kind not in kinds:
            continue
        m = enumerate_mappings(op, intr)[0]
        padded, base = tile_and_reorder(op, m, pad=True)
        sketch = next(enumerate_cpu_space(padded, base), None)
        res = tensorize(op, intr, m, pad=True, sketch=sketch)
        results[kind] = verify(op, res, trials=trials, seed=7, rtol=rtol)
    return results


def conservation(intr):
    """calls x lanes x reduction width == scalar MACs of the padded nest."""
    out = {}
    for kind, op in differential_ops(intr).items():
        res = tensorize(op, intr, pad=True)
        ins = random_inputs(op, np.random.default_rng(0))
        rep = measure(res.tir, ins, res.registry)
        macs = measure(lower(res.op), ins).scalar_mac_count
        out[kind] = (rep.scalar_mac_count, rep.total_calls * intr.lanes * intr.reduction_width, macs)
    return out


# ------------------------------------------------------------ criteria


def test_criterion_1_differential_soundness(report):
    t0 = time.perf_counter()
    bad = []
    runs = 0
    for name in BUILTINS:
        for kind, r in soundness(builtin(name)).items():
            runs += 1
            if not r.passed:
                bad.append(f"{name}/{kind} dev={r.max_deviation:g}")
    dt = time.perf_counter() - t0
    ok = not bad and runs == 9 and dt < 60
    report(1, ok, f"{runs} intrinsic x op pairs x 50 trials, failures={bad or 'none'}, {dt:.1f}s (limit 60s)")


def test_criterion_2_conv_operand_pattern(report):
    vdot = builtin("vdot_16x4")
    op = parse_compute(conv_blocked_tdsl(WorkloadSpec("c", 4, 3, 16, 1, 1, 3), 16, 4))
    first = enumerate_mappings(op, vdot)[0]
    call = next(s for s in iter_stmts(tensorize(op, vdot).tir.body) if isinstance(s, IntrinsicCallStmt))
    ops = dict(call.operands)
    pattern = (
        isinstance(call.dest, VLoad) and call.dest.lanes == 16 and isinstance(call.dest.addr, Ramp)
        and isinstance(ops["c"], VLoad) and ops["c"].lanes == 16
        and isinstance(ops["a"], BroadcastVec) and ops["a"].value.lanes == 4 and ops["a"].times == 16
        and isinstance(ops["b"], ConcatVec) and [p.lanes for p in ops["b"].parts] == [4] * 16
    )
    text = format_tir(tensorize(op, vdot).tir)
    golden = (HERE / "golden" / "conv_vdot_16x4.tir").read_text()
    ok = first.describe() == "{ki->i, ci->j}" and pattern and text == golden
    report(2, ok, f"mapping {first.describe()}, operand pattern {'matches' if pattern else 'differs'}, "
                  f"golden IR {'identical' if text == golden else 'differs'}")


def matmul_family():
    """Every program C[dp] += A[..] * B[..] with <= 5 loops, each loop used
    by A, by B or by both (dp loops always index C)."""
    for ndp, nred in itertools.product(range(1, 4), range(1, 3)):
        dps = [f"d{i}" for i in range(ndp)]
        reds = [f"r{i}" for i in range(nred)]
        for use in itertools.product("AB2", repeat=ndp + nred):
            a = [lp for lp, u in zip(dps + reds, use) if u in "A2"]
            b = [lp for lp, u in zip(dps + reds, use) if u in "B2"]
            if not a or not b:
                continue
            for prof in ("int8", "fp16"):
                ta, tb, tc = ("u8", "i8", "i32") if prof == "int8" else ("f16", "f16", "f32")
                ext = {lp: 16 for lp in dps} | {lp: 4 for lp in reds}
                shape = lambda ls: ", ".join(str(ext[x]) for x in ls)  # noqa: E731
                lines = [
                    f"tensor A : {ta}[{shape(a)}] input",
                    f"tensor B : {tb}[{shape(b)}] input",
                    f"tensor C : {tc}[{shape(dps)}] output",
                    *(f"loop {x} : dp 16" for x in dps),
                    *(f"loop {x} : red 4" for x in reds),
                    f"C[{', '.join(dps)}] += cast<{tc}>(A[{', '.join(a)}]) * cast<{tc}>(B[{', '.join(b)}])",
                ]
                yield parse_compute("\n".join(lines) + "\n")


def test_criterion_3_feasibility_brute_force(report):
    t0 = time.perf_counter()
    checked = mismatches = 0
    for op in matmul_family():
        for name in BUILTINS:
            intr = builtin(name)
            bind = inspect_op(op, intr)
            if not isinstance(bind, BindMap):
                continue
            got = {frozenset(m.f) for m in enumerate_mappings(op, intr, bind)}
            want = brute_force_mappings(op, intr, bind)
            checked += 1
            if got != want:
                mismatches += 1
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and checked > 0 and dt < 10
    report(3, ok, f"{checked} (op, intrinsic) pairs exhaustively compared, {mismatches} mismatches, {dt:.1f}s (limit 10s)")


def test_criterion_4_work_conservation(report):
    parts = []
    ok = True
    for name, calls in (("vdot_16x4", 64), ("wmma_16x16x16", 1)):
        intr = builtin(name)
        op = matmul_op_for(16, 16, 16, intr)
        res = tensorize(op, intr)
        rep = measure(res.tir, random_inputs(op, np.random.default_rng(0)), res.registry)
        ok &= rep.intrinsic_call_count == {name: calls} and rep.total_calls * intr.lanes * intr.reduction_width == 4096
        parts.append(f"16^3 {name}: {rep.total_calls} calls")
    # a padded kernel: 16 x 10 x 6 matmul
    vdot = builtin("vdot_16x4")
    op = parse_compute(matmul_tdsl(16, 10, 6))
    res = tensorize(op, vdot, pad=True)
    ins = random_inputs(op, np.random.default_rng(0))
    rep = measure(res.tir, ins, res.registry)
    macs = measure(lower(res.op), ins).scalar_mac_count
    padded_ok = rep.scalar_mac_count == 0 and rep.total_calls * 64 == macs
    ok &= padded_ok
    for name in BUILTINS:
        for resid, tens, total in conservation(builtin(name)).values():
            ok &= resid == 0 and tens == total
    parts.append(f"padded 16x10x6: {rep.total_calls} calls x 64 = {macs} MACs")
    report(4, ok, "; ".join(parts))


def test_criterion_5_schedule_preservation(report):
    t0 = time.perf_counter()
    vdot = builtin("vdot_16x4")
    ints = [builtin(n) for n in ("vdot_16x4", "vdot_4x4")]
    ops = {
        "matmul": parse_compute(matmul_tdsl(32, 32, 16)),
        "conv2d": conv_op_for(WorkloadSpec("c", 8, 6, 32, 3, 1, 4), vdot),
        "conv3d": conv_op_for(WorkloadSpec("c", 8, 4, 32, 3, 1, 2, D=2), vdot),
    }
    rng = np.random.default_rng(2024)
    fails = []
    total = 0
    for kind, op in ops.items():
        for n in range(200):
            ins = random_inputs(op, rng)
            ref = eval_reference(op, ins)
            if n % 2 == 0:
                tir = lower(op, random_plain_schedule(op, rng))
                registry = None
            else:
                intr = ints[(n // 2) % len(ints)]
                padded, m, _, sched = random_tensorized(op, intr, rng)
                tir = inject_intrinsic(lower(padded, sched), intr, m)
                registry = {intr.name: intr}
            total += 1
            if not eval_tir(tir, ins, registry).equals(ref):
                fails.append(f"{kind}#{n}")
    dt = time.perf_counter() - t0
    ok = not fails and total == 600 and dt < 120
    report(5, ok, f"{total} random schedules over 3 ops, failures={fails or 'none'}, {dt:.1f}s (limit 120s)")


def test_criterion_6_tuner_contract(report):
    vdot = builtin("vdot_16x4")
    outside = []
    not_min = []
    for ws in TABLE1:
        op = conv_op_for(ws, vdot)
        m = enumerate_mappings(op, vdot)[0]
        padded, base = tile_and_reorder(op, m)
        ext = [lp.extent for lp in outer_dp_loops(apply_schedule(padded, base))]
        first = next(enumerate_cpu_space(padded, base))
        par, _, unr = region_sizes(ext, first.bp1, first.bp2)
        if not (par < 3000 and unr < 8):
            outside.append(ws.name)
        res = tune(op, vdot)
        costs = []
        for c in res.candidates:
            tir = inject_intrinsic(lower(c.op, c.schedule), vdot, c.mapping)
            costs.append((static_cost(tir).cost_tuple(), c.id))
        if (res.best.cost_tuple, res.best.id) != min(costs):
            not_min.append(ws.name)
    ok = not outside and not not_min
    report(6, ok, f"default-first outside limits: {outside or 'none'}; non-minimal results: {not_min or 'none'} (16 workloads)")


def test_criterion_7_extensibility(report):
    intr = load_intrinsic(NEW_INTRINSIC)
    sound = soundness(intr)
    work = conservation(intr)
    new_ok = all(r.passed for r in sound.values()) and all(r == 0 and t == m for r, t, m in work.values())
    conv3d_ok = all(soundness(builtin(n), kinds=("conv3d",))["conv3d"].passed for n in BUILTINS)
    report(7, new_ok and conv3d_ok,
           f"(a) {intr.name} from file: {'pass' if new_ok else 'fail'}; (b) conv3d on built-ins: {'pass' if conv3d_ok else 'fail'}")


def test_criterion_8_negative_suite(report):
    vdot, wmma = builtin("vdot_16x4"), builtin("wmma_16x16x16")
    checks = {}
    fp32 = matmul_tdsl(16, 16, 16).replace("u8", "f32").replace("i8", "f32").replace("i32", "f32")
    checks["fp32 vs integer intrinsic"] = isinstance(inspect_op(parse_compute(fp32), vdot), NotIsomorphic)
    checks["eltwise"] = enumerate_mappings(parse_compute(ELTWISE_SRC), vdot) == []
    try:
        tensorize(parse_compute(matmul_tdsl(15, 15, 16)), vdot)
        checks["non-dividing without pad"] = False
    except DivisibilityError:
        checks["non-dividing without pad"] = True
    mm = matmul_op_for(16, 16, 16, wmma)
    swapped = {"x": "y", "y": "x", "k": "k"}
    ok, _ = feasibility(mm, wmma, swapped, inspect_op(mm, wmma))
    checks["swapped wmma mapping"] = not ok and all(
        dict(m.f) != swapped for m in enumerate_mappings(mm, wmma)
    )
    failed = [k for k, v in checks.items() if not v]
    report(8, not failed, f"{len(checks) - len(failed)}/{len(checks)} negative cases rejected; failing: {failed or 'none'}")
