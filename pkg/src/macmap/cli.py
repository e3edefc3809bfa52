"""Command-line front end.

Exit codes: 0 success, 1 no feasible mapping or failed verification,
2 usage, parse or schedule errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from macmap.errors import (
    DivisibilityError,
    DSLSyntaxError,
    MacmapError,
    NoFeasibleMapping,
)
from macmap.inspector import NotIsomorphic, enumerate_mappings, inspect_op
from macmap.intrinsics.registry import Intrinsic, resolve
from macmap.pipeline import tensorize, verify
from macmap.rewriter.lower import lower
from macmap.rewriter.schedule import parse_schedule
from macmap.rewriter.sketches import parse_sketch
from macmap.tensor_ir import parse_compute
from macmap.tensor_ir.expr import ComputeOp
from macmap.tensor_ir.tir import format_tir
from macmap.tuner import tune
from macmap.vm import values
from macmap.vm.engine import run_and_measure
from macmap.workloads import BANKS, conv_op_for

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ------------------------------------------------------------ helpers


def _workload(name: str):
    for bank in BANKS.values():
        for ws in bank:
            if ws.name == name:
                return ws
    raise UsageError(f"unknown workload {name!r}")


def _load_op(args, intr: Intrinsic | None) -> ComputeOp:
    if getattr(args, "workload", None):
        if intr is None:
            raise UsageError("--workload needs --intrinsic to choose the data layout")
        return conv_op_for(_workload(args.workload), intr)
    if not args.program:
        raise UsageError("give a program file or --workload")
    return parse_compute(Path(args.program).read_text())


def _intrinsic(args, required: bool = True) -> Intrinsic | None:
    if not args.intrinsic:
        if required:
            raise UsageError("--intrinsic is required")
        return None
    return resolve(args.intrinsic)


def _emit(args, text: str, data: dict) -> None:
    if args.format == "structured":
        print(json.dumps(data, sort_keys=True))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _mapping_dict(m) -> dict:
    return {
        "loops": {a: b for a, b in m.f},
        "broadcast": {t: list(ax) for t, ax in m.broadcast},
        "needs_padding": m.needs_padding,
    }


def _sketch(args):
    return parse_sketch(args.sketch) if getattr(args, "sketch", None) else None


def _schedule(args):
    path = getattr(args, "schedule", None)
    return parse_schedule(Path(path).read_text()) if path else None


# ------------------------------------------------------------ commands


def cmd_inspect(args) -> int:
    intr = _intrinsic(args)
    op = _load_op(args, intr)
    bind = inspect_op(op, intr, commutative=args.commutative)
    if isinstance(bind, NotIsomorphic):
        _emit(args, f"{bind}\nno feasible mapping", {"mappings": [], "reason": str(bind)})
        return EXIT_FAIL
    mappings = enumerate_mappings(op, intr, bind)
    lines = [f"bind: {bind}"]
    for n, m in enumerate(mappings):
        bc = "; ".join(f"{t} along {','.join(ax)}" for t, ax in m.broadcast) or "none"
        lines.append(f"mapping {n}: {m.describe()} broadcast={bc} padding={'yes' if m.needs_padding else 'no'}")
    if not mappings:
        lines.append("no feasible mapping")
    _emit(args, "\n".join(lines), {"bind": str(bind), "mappings": [_mapping_dict(m) for m in mappings]})
    return EXIT_OK if mappings else EXIT_FAIL


def cmd_tensorize(args) -> int:
    intr = _intrinsic(args)
    op = _load_op(args, intr)
    res = tensorize(op, intr, args.mapping, pad=args.pad, sketch=_sketch(args), schedule=_schedule(args))
    text = format_tir(res.tir)
    if args.schedule_out:
        Path(args.schedule_out).write_text(res.schedule.to_text())
    if args.output:
        Path(args.output).write_text(text)
    _emit(
        args,
        text,
        {"mapping": _mapping_dict(res.mapping), "schedule": res.schedule.to_text(), "ir": text},
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    intr = _intrinsic(args)
    op = _load_op(args, intr)
    res = tensorize(op, intr, args.mapping, pad=args.pad, sketch=_sketch(args), schedule=_schedule(args))
    rtol = args.rtol if args.rtol is not None else 0.0
    if op.output.dtype.is_float and args.rtol is None:
        raise UsageError("floating-point output: pass --rtol")
    out = verify(op, res, trials=args.trials, seed=args.seed, rtol=rtol)
    status = "PASS" if out.passed else "FAIL"
    lines = [f"{status} trials={out.trials} max_deviation={out.max_deviation:g}"]
    if out.first_mismatch is not None:
        t, i = out.first_mismatch
        lines.append(f"first mismatch: trial {t}, output index {i}")
        lines += out.details
    _emit(
        args,
        "\n".join(lines),
        {
            "passed": out.passed,
            "trials": out.trials,
            "max_deviation": out.max_deviation,
            "first_mismatch": list(out.first_mismatch) if out.first_mismatch else None,
        },
    )
    return EXIT_OK if out.passed else EXIT_FAIL


def _tune_one(args, op: ComputeOp, intr: Intrinsic, log):
    return tune(
        op,
        intr,
        target=args.target,
        budget=args.budget,
        pad=args.pad,
        seed=args.seed,
        rtol=args.rtol,
        workers=args.workers,
        on_candidate=lambda c: log(c.log_line()),
    )


def cmd_tune(args) -> int:
    intr = _intrinsic(args)
    log_file = open(args.log, "a") if args.log else None

    def log(line: str) -> None:
        if log_file is not None:
            log_file.write(line + "\n")
        elif args.format != "structured":
            print(line)

    try:
        if args.bank:
            rows = []
            for ws in BANKS[args.bank]:
                res = _tune_one(args, conv_op_for(ws, intr), intr, log)
                b = res.best
                rows.append(
                    {
                        "workload": ws.name,
                        "mapping": b.mapping.describe(),
                        "sketch": str(b.sketch),
                        "cost": list(b.cost_tuple),
                        "candidates": len(res.candidates),
                    }
                )
            text = "\n".join(
                f"result {r['workload']} mapping={r['mapping'].replace(' ', '')} sketch={r['sketch']} "
                f"cost={','.join(map(str, r['cost']))} candidates={r['candidates']}"
                for r in rows
            )
            _emit(args, text, {"results": rows})
            return EXIT_OK
        op = _load_op(args, intr)
        res = _tune_one(args, op, intr, log)
    finally:
        if log_file is not None:
            log_file.close()
    b = res.best
    if args.schedule_out:
        Path(args.schedule_out).write_text(b.schedule.to_text())
    _emit(
        args,
        f"best candidate {b.id} mapping={b.mapping.describe().replace(' ', '')} sketch={b.sketch} "
        f"cost={','.join(map(str, b.cost_tuple))}",
        {
            "best": b.id,
            "mapping": _mapping_dict(b.mapping),
            "sketch": str(b.sketch),
            "cost": b.cost.to_dict(),
            "candidates": [c.log_line() for c in res.candidates],
        },
    )
    return EXIT_OK


def _inputs(specs: list[str]) -> dict:
    out = {}
    for s in specs:
        name, eq, path = s.partition("=")
        if not eq:
            raise UsageError(f"--input expects name=path, got {s!r}")
        out[name] = values.load(path)
    return out


def cmd_run(args) -> int:
    intr = _intrinsic(args, required=False)
    op = _load_op(args, intr)
    if intr is None:
        tir = lower(op, _schedule(args))
    else:
        tir = tensorize(op, intr, args.mapping, pad=args.pad, sketch=_sketch(args), schedule=_schedule(args)).tir
    registry = None if intr is None else {intr.name: intr}
    out, rep = run_and_measure(tir, _inputs(args.input), registry)
    if args.output:
        values.save(out, args.output)
    if args.cost_out:
        p = Path(args.cost_out)
        p.write_text(rep.to_json() + "\n" if p.suffix == ".json" else rep.to_text())
    text = rep.to_text()
    if not args.output:
        text = values.to_text(out) + text
    _emit(args, text, {"cost": rep.to_dict(), "output_shape": list(out.shape), "output_dtype": str(out.dtype)})
    return EXIT_OK


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="macmap", description="Map loop-nest programs onto dot-product intrinsics.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, program=True):
        if program:
            sp.add_argument("program", nargs="?", help="compute program file (.tdsl)")
            sp.add_argument("--workload", help="bank workload name instead of a program file")
        sp.add_argument("--intrinsic", help="built-in intrinsic name or .intr file")
        sp.add_argument("--format", choices=("text", "structured"), default="text")
        sp.add_argument("--seed", type=int, default=0)

    def rewrite(sp):
        sp.add_argument("--mapping", type=int, help="index into the inspector's mapping list")
        sp.add_argument("--pad", action="store_true", help="zero-pad loops that do not divide")
        sp.add_argument("--sketch", help="cpu(bp1=l:t,bp2=l:t) or gpu(p=..,fuse_hw=on|off,split_k=..)")
        sp.add_argument("--schedule", help="extra .sched transforms appended after tiling")

    sp = sub.add_parser("inspect", help="list feasible loop mappings")
    common(sp)
    sp.add_argument("--commutative", action="store_true", help="match modulo operand order of + and *")
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("tensorize", help="emit tensorized TensorIR")
    common(sp)
    rewrite(sp)
    sp.add_argument("-o", "--output", help="write the IR here")
    sp.add_argument("--schedule-out", help="write the schedule here")
    sp.set_defaults(func=cmd_tensorize)

    sp = sub.add_parser("verify", help="differential check against the reference")
    common(sp)
    rewrite(sp)
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--rtol", type=float)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("tune", help="search schedules under the cost model")
    common(sp)
    sp.add_argument("--pad", action="store_true")
    sp.add_argument("--target", choices=("cpu", "gpu"), default="cpu")
    sp.add_argument("--budget", type=int)
    sp.add_argument("--bank", choices=sorted(BANKS))
    sp.add_argument("--rtol", type=float)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--log", help="append candidate lines to this file")
    sp.add_argument("--schedule-out", help="write the best schedule here")
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("run", help="execute a program on tensor files and report costs")
    common(sp)
    rewrite(sp)
    sp.add_argument("--input", action="append", default=[], metavar="NAME=PATH")
    sp.add_argument("-o", "--output", help="write the output tensor here")
    sp.add_argument("--cost-out", help="write the cost report here (.json for structured)")
    sp.set_defaults(func=cmd_run)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NoFeasibleMapping, DivisibilityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    except (UsageError, DSLSyntaxError, MacmapError, IndexError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
