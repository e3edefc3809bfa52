import itertools

import numpy as np
import pytest

from macmap.errors import NoFeasibleMapping
from macmap.inspector import enumerate_mappings
from macmap.intrinsics import builtin
from macmap.pipeline import random_inputs
from macmap.rewriter import GpuSketch, apply_schedule, inject_intrinsic, lower, tile_and_reorder
from macmap.rewriter.sketches import outer_dp_loops, region_sizes
from macmap.tensor_ir import parse_compute
from macmap.tuner import (
    enumerate_cpu_space,
    enumerate_gpu_space,
    evaluate,
    tune,
)
from macmap.vm.engine import measure
from macmap.vm.reference import eval_reference
from macmap.workloads import TABLE1, conv_op_for, matmul_tdsl, table1

VDOT = builtin("vdot_16x4")


def tiled(op, intr=VDOT):
    m = enumerate_mappings(op, intr)[0]
    padded, base = tile_and_reorder(op, m)
    return padded, base, m


def extents_of(op, base):
    return [lp.extent for lp in outer_dp_loops(apply_schedule(op, base))]


def test_default_first_within_limits_table1_5():
    op, base, _ = tiled(conv_op_for(table1(5), VDOT))
    first = next(enumerate_cpu_space(op, base))
    par, _, unr = region_sizes(extents_of(op, base), first.bp1, first.bp2)
    assert par <= 2999 and unr <= 7


@pytest.mark.parametrize("ws", TABLE1, ids=lambda w: w.name)
def test_default_first_is_best_inside_limits(ws):
    op, base, _ = tiled(conv_op_for(ws, VDOT))
    ext = extents_of(op, base)
    space = list(enumerate_cpu_space(op, base))
    sizes = [region_sizes(ext, s.bp1, s.bp2) for s in space]
    inside = [(p, u) for p, _, u in sizes if p < 3000 and u < 8]
    assert (sizes[0][0], sizes[0][2]) == max(inside)


def test_single_unit_loop_one_sketch():
    op = parse_compute(matmul_tdsl(1, 16, 4))
    op, base, _ = tiled(op)
    assert extents_of(op, base) == [1, 1]
    assert len(list(enumerate_cpu_space(op, base))) == 1


def brute_force_pairs(extents):
    """Count distinct (parallel, serial, unroll) splits of the nest.

    Each cut position corresponds to a prefix of loops plus a divisor of the
    next loop; two cuts are ordered when the first comes no later than the
    second and, inside the same loop, nests its factor.
    """
    cuts = set()
    for lvl, e in enumerate(extents):
        for t in range(1, e + 1):
            if e % t == 0 and (t < e or lvl == 0):
                cuts.add((lvl, t))
    n = 0
    for (l1, t1), (l2, t2) in itertools.product(cuts, cuts):
        if l1 < l2 or (l1 == l2 and t1 % t2 == 0):
            n += 1
    return n


def test_cpu_space_size_matches_brute_force():
    op = parse_compute(matmul_tdsl(12, 64, 4))  # outer dp loops x=12, yo=4
    op3 = parse_compute(matmul_tdsl(6, 32, 4))
    for o in (op, op3):
        o2, base, _ = tiled(o)
        ext = extents_of(o2, base)
        assert len(list(enumerate_cpu_space(o2, base))) == brute_force_pairs(ext)
    conv, base, _ = tiled(conv_op_for(table1(5), VDOT))
    ext = extents_of(conv, base)
    assert len(ext) == 4  # ko, oh, ow, kio
    assert len(list(enumerate_cpu_space(conv, base))) == brute_force_pairs(ext)


def test_cpu_space_has_no_duplicate_regions():
    op, base, _ = tiled(parse_compute(matmul_tdsl(12, 64, 4)))
    space = list(enumerate_cpu_space(op, base))
    assert len(set(space)) == len(space)


def test_gpu_space_at_most_eight():
    op, base, _ = tiled(conv_op_for(table1(8), VDOT))
    space = list(enumerate_gpu_space(op, base, p_max=2, split_factors=(64,)))
    assert len(space) == len(set(space)) == 8
    # without height/width loops the fusion choice does not apply
    op, base, _ = tiled(parse_compute(matmul_tdsl(32, 32, 256)))
    space = list(enumerate_gpu_space(op, base, p_max=2, split_factors=(64,)))
    assert len(space) == 4 and not any(sk.fuse_hw for sk in space)


def test_gpu_split_filtered_when_not_dividing():
    # reduction 48 * 4 -> outer reduction loop of extent 48
    op, base, _ = tiled(parse_compute(matmul_tdsl(32, 32, 192)))
    space = list(enumerate_gpu_space(op, base))
    assert space and all(sk.split_k == 1 for sk in space)


def test_gpu_default_deep_channel_small_plane():
    ws = table1(8)  # 14x14, 1024 input channels
    op, base, _ = tiled(conv_op_for(ws, VDOT))
    first = next(enumerate_gpu_space(op, base))
    assert first == GpuSketch(2, True, 64)


def test_gpu_default_large_plane_no_fuse():
    op, base, _ = tiled(conv_op_for(table1(4), VDOT))  # 71x71 output plane
    first = next(enumerate_gpu_space(op, base))
    assert not first.fuse_hw


def test_budget_one_returns_default():
    op = parse_compute(matmul_tdsl(32, 32, 16))
    res = tune(op, VDOT, budget=1)
    p, base, _ = tiled(op)
    assert len(res.candidates) == 1
    assert res.best.sketch == next(enumerate_cpu_space(p, base))


def test_tuned_matmul_has_no_residual_macs():
    op = parse_compute(matmul_tdsl(16, 16, 64))
    best = tune(op, VDOT).best
    assert best.status == "ok"
    assert best.cost.scalar_mac_count == 0
    assert best.cost.total_calls * 64 == 16 * 16 * 64


def test_no_feasible_mapping():
    op = parse_compute(
        "tensor A : i32[16] input\ntensor B : i32[16] input\ntensor C : i32[16] output\nloop i : dp 16\nC[i] = A[i] + B[i]\n"
    )
    with pytest.raises(NoFeasibleMapping):
        tune(op, VDOT)


@pytest.mark.parametrize("target", ["cpu", "gpu"])
def test_optimality_and_soundness(target):
    op = parse_compute(matmul_tdsl(32, 64, 128))
    res = tune(op, VDOT, target=target)
    assert all(c.status == "ok" for c in res.candidates)
    # re-evaluate every candidate independently
    ins = random_inputs(op, np.random.default_rng(99))
    ref = eval_reference(op, ins)
    costs = []
    for c in res.candidates:
        tir = inject_intrinsic(lower(c.op, c.schedule), VDOT, c.mapping)
        rep = measure(tir, ins, {VDOT.name: VDOT})
        assert rep.cost_tuple() == c.cost_tuple
        costs.append((rep.cost_tuple(), c.id))
    assert (res.best.cost_tuple, res.best.id) == min(costs)
    best_tir = inject_intrinsic(lower(res.best.op, res.best.schedule), VDOT, res.best.mapping)
    from macmap.vm.engine import eval_tir

    assert eval_tir(best_tir, ins, {VDOT.name: VDOT}).equals(ref)


def test_workers_do_not_change_result():
    op = parse_compute(matmul_tdsl(32, 64, 64))
    a = tune(op, VDOT)
    b = tune(op, VDOT, workers=4)
    assert a.best.id == b.best.id and a.log() == b.log()


def test_unsound_candidate_cannot_win():
    op = parse_compute(matmul_tdsl(16, 16, 16))
    res = tune(op, VDOT, budget=1)
    cand = res.candidates[0]
    bad = VDOT.__class__(**{**VDOT.__dict__, "name": VDOT.name})
    # corrupt the probe reference so the candidate mismatches
    ins = random_inputs(op, np.random.default_rng(0))
    wrong = eval_reference(op, ins)
    wrong.data[0] += 1
    cand.status = "pending"
    evaluate(cand, op, bad, ins, wrong, 0.0)
    assert cand.status == "mismatch" and not cand.rankable


def test_large_op_ranked_statically():
    op = conv_op_for(table1(8), VDOT)
    res = tune(op, VDOT, budget=2)
    assert all(c.status == "unverified" for c in res.candidates)
    assert res.best.cost.total_calls > 0


def test_log_lines_parse():
    op = parse_compute(matmul_tdsl(16, 32, 16))
    res = tune(op, VDOT, budget=3)
    for n, line in enumerate(res.log().splitlines()):
        words = line.split()
        assert words[0] == "candidate" and int(words[1]) == n
        fields = dict(w.split("=", 1) for w in words[2:])
        assert set(fields) == {"mapping", "sketch", "cost", "status"}
        assert len(fields["cost"].split(",")) == 3
