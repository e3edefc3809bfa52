import json
import re
import subprocess
import sys

import numpy as np
import pytest

from macmap.cli import main
from macmap.intrinsics import builtin
from macmap.intrinsics.registry import format_intrinsic
from macmap.vm import values
from macmap.vm.values import TensorValue
from macmap.workloads import WorkloadSpec, conv_plain_tdsl, conv_tdsl_for, matmul_tdsl

from conftest import ELTWISE_SRC

VDOT = builtin("vdot_16x4")


@pytest.fixture
def prog(tmp_path):
    def write(text, name="p.tdsl"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)

    return write


def run(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr()
    return rc, out.out, out.err


def test_inspect_matmul_two_mappings(prog, capsys):
    rc, out, _ = run(capsys, "inspect", prog(matmul_tdsl(16, 16, 16)), "--intrinsic", "vdot_16x4")
    assert rc == 0
    assert len(re.findall(r"^mapping \d+:", out, re.M)) == 2
    assert out.startswith("bind: ")


def test_inspect_eltwise_none(prog, capsys):
    rc, out, _ = run(capsys, "inspect", prog(ELTWISE_SRC), "--intrinsic", "vdot_16x4")
    assert rc == 1 and "no feasible mapping" in out


def test_inspect_conv3d_unchanged_tooling(capsys):
    rc, out, _ = run(capsys, "inspect", "--workload", "resnet18-3d-conv2", "--intrinsic", "vdot_16x4")
    assert rc == 0 and "mapping 0: {ki->i, ci->j}" in out


def test_inspect_structured(prog, capsys):
    rc, out, _ = run(
        capsys, "inspect", prog(matmul_tdsl(16, 16, 16)), "--intrinsic", "vdot_16x4", "--format", "structured"
    )
    data = json.loads(out)
    assert rc == 0 and len(data["mappings"]) == 2
    assert data["mappings"][0]["loops"] == {"y": "i", "k": "j"}


def test_tensorize_conv_call_count(prog, capsys, tmp_path):
    ws = WorkloadSpec("c", 8, 6, 32, 3, 1, 4)
    rc, out, _ = run(
        capsys, "tensorize", prog(conv_tdsl_for(ws, VDOT)), "--intrinsic", "vdot_16x4",
        "--schedule-out", str(tmp_path / "s.sched"),
    )
    assert rc == 0
    assert out.count("call vdot_16x4") == 1
    # the single call sits in a nest covering ko * co * spatial * window iterations
    extents = [int(e) for e in re.findall(r"^\s*for \w+ in 0\.\.(\d+)", out, re.M)]
    assert np.prod(extents) == (32 // 16) * (8 // 4) * 4 * 4 * 3 * 3
    assert (tmp_path / "s.sched").read_text().strip()


def test_tensorize_deterministic(prog, capsys):
    p = prog(matmul_tdsl(32, 16, 16))
    a = run(capsys, "tensorize", p, "--intrinsic", "vdot_16x4", "--sketch", "cpu(bp1=0:16,bp2=0:2)")
    b = run(capsys, "tensorize", p, "--intrinsic", "vdot_16x4", "--sketch", "cpu(bp1=0:16,bp2=0:2)")
    assert a == b and a[0] == 0


def test_tensorize_pad_channels(prog, capsys):
    p = prog(conv_plain_tdsl(WorkloadSpec("c", 10, 4, 16, 3, 1, 2)))
    rc, _, err = run(capsys, "tensorize", p, "--intrinsic", "vdot_16x4")
    assert rc == 1 and "padding" in err
    rc, out, _ = run(capsys, "tensorize", p, "--intrinsic", "vdot_16x4", "--pad")
    assert rc == 0
    assert "buffer data : u8[12, 4, 4] input" in out
    assert "buffer kernel : i8[16, 12, 3, 3] input" in out
    rc, out, _ = run(capsys, "verify", p, "--intrinsic", "vdot_16x4", "--pad", "--trials", "5")
    assert rc == 0 and out.startswith("PASS")


def test_bad_mapping_index_is_usage_error(prog, capsys):
    rc, _, err = run(capsys, "tensorize", prog(matmul_tdsl(16, 16, 16)), "--intrinsic", "vdot_16x4", "--mapping", "7")
    assert rc == 2 and "out of range" in err


def test_parse_error_exit_two(prog, capsys):
    rc, _, err = run(capsys, "inspect", prog("tensor A : i32[4 input\n"), "--intrinsic", "vdot_16x4")
    assert rc == 2 and "1:18" in err


def test_missing_intrinsic_flag(prog, capsys):
    rc, _, _ = run(capsys, "inspect", prog(matmul_tdsl(16, 16, 16)))
    assert rc == 2


def test_verify_matmul_pass(prog, capsys):
    rc, out, _ = run(capsys, "verify", prog(matmul_tdsl(16, 32, 16)), "--intrinsic", "vdot_16x4")
    assert rc == 0 and out.splitlines()[0] == "PASS trials=50 max_deviation=0"


def test_verify_fp16_needs_rtol(prog, capsys):
    p = prog(matmul_tdsl(16, 16, 16, "fp16"))
    rc, _, err = run(capsys, "verify", p, "--intrinsic", "wmma_16x16x16", "--trials", "3")
    assert rc == 2 and "--rtol" in err
    rc, out, _ = run(capsys, "verify", p, "--intrinsic", "wmma_16x16x16", "--trials", "10", "--rtol", "1e-3")
    assert rc == 0 and out.startswith("PASS")


def test_verify_corrupted_intrinsic_fails(prog, capsys, tmp_path):
    text = format_intrinsic(VDOT).replace("intrinsic vdot_16x4", "intrinsic vdot_bad")
    text = text.replace("rule b: unroll(i) vectorize(j)", "rule b: unroll(j) vectorize(i)")
    bad = tmp_path / "bad.intr"
    bad.write_text(text)
    rc, out, _ = run(capsys, "verify", prog(matmul_tdsl(16, 32, 16)), "--intrinsic", str(bad), "--trials", "3")
    assert rc == 1 and out.startswith("FAIL")
    assert re.search(r"first mismatch: trial 0, output index \d+", out)


def test_tune_table1_5(capsys, tmp_path):
    log = tmp_path / "tune.log"
    sched = tmp_path / "best.sched"
    rc, out, _ = run(
        capsys, "tune", "--workload", "table1-5", "--intrinsic", "vdot_16x4", "--budget", "4",
        "--log", str(log), "--schedule-out", str(sched),
    )
    assert rc == 0 and out.startswith("best candidate ")
    lines = log.read_text().splitlines()
    assert len(lines) == 4 and all(ln.startswith("candidate ") for ln in lines)
    assert sched.read_text().strip()


def test_tune_budget_one_line(prog, capsys):
    rc, out, _ = run(capsys, "tune", prog(matmul_tdsl(16, 32, 16)), "--intrinsic", "vdot_16x4", "--budget", "1")
    lines = out.splitlines()
    assert rc == 0
    assert sum(ln.startswith("candidate ") for ln in lines) == 1


def test_tune_bank_rows(capsys):
    rc, out, _ = run(capsys, "tune", "--bank", "table1", "--intrinsic", "vdot_16x4", "--budget", "1")
    rows = [ln for ln in out.splitlines() if ln.startswith("result ")]
    assert rc == 0 and len(rows) == 16
    assert rows[0].split()[1] == "table1-1"


def test_tune_no_mapping(prog, capsys):
    rc, _, _ = run(capsys, "tune", prog(ELTWISE_SRC), "--intrinsic", "vdot_16x4")
    assert rc == 1


def test_run_with_files(prog, capsys, tmp_path, rng):
    p = prog(matmul_tdsl(16, 16, 16))
    from macmap.dtypes import parse_dtype

    a = TensorValue.random(parse_dtype("u8"), (16, 16), rng)
    b = TensorValue.random(parse_dtype("i8"), (16, 16), rng)
    c = TensorValue.zeros(parse_dtype("i32"), (16, 16))
    for n, t in (("A", a), ("B", b), ("C", c)):
        values.save(t, tmp_path / f"{n}.bin")
    args = [f"--input={n}={tmp_path / n}.bin" for n in "ABC"]
    rc, _, _ = run(
        capsys, "run", p, "--intrinsic", "vdot_16x4", *args,
        "-o", str(tmp_path / "out.bin"), "--cost-out", str(tmp_path / "cost.json"),
    )
    assert rc == 0
    out = values.load(tmp_path / "out.bin").array()
    want = a.array().astype(np.int64) @ b.array().astype(np.int64)
    assert (out == want).all()
    cost = json.loads((tmp_path / "cost.json").read_text())
    assert cost["intrinsic_call_count"] == {"vdot_16x4": 64}


def test_run_missing_input(prog, capsys):
    rc, _, err = run(capsys, "run", prog(matmul_tdsl(4, 4, 4)))
    assert rc == 2 and "input" in err


def test_console_entry_point(prog):
    p = prog(matmul_tdsl(16, 16, 16))
    r = subprocess.run(
        [sys.executable, "-m", "macmap.cli", "inspect", p, "--intrinsic", "vdot_16x4"],
        capture_output=True, text=True,
    )
    assert r.returncode == 0 and "mapping 1:" in r.stdout
