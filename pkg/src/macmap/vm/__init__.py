"""Reference interpreter, TensorIR evaluator and cost accounting."""

from macmap.vm import backend
from macmap.vm.cost import CostReport, static_cost
from macmap.vm.engine import eval_tir, measure, run_and_measure
from macmap.vm.reference import eval_reference
from macmap.vm.values import TensorValue, load, save

__all__ = [
    "backend",
    "CostReport",
    "TensorValue",
    "eval_reference",
    "eval_tir",
    "load",
    "measure",
    "run_and_measure",
    "save",
    "static_cost",
]
