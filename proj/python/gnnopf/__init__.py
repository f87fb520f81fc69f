"""Python bindings for the gnnopf C++ core."""

from ._core import (
    Checkpoint,
    ContractError,
    Dataset,
    FormatError,
    GenerationError,
    GridCase,
    ParseError,
    TrainingError,
    ValidationError,
    architectures,
    evaluate,
    generate_dataset,
    gso,
    load_case,
    load_checkpoint,
    load_dataset,
    parse_case,
    solve_acopf,
    solve_dcopf,
    solve_power_flow,
    train,
)

__all__ = [
    "Checkpoint",
    "ContractError",
    "Dataset",
    "FormatError",
    "GenerationError",
    "GridCase",
    "ParseError",
    "TrainingError",
    "ValidationError",
    "architectures",
    "evaluate",
    "generate_dataset",
    "gso",
    "load_case",
    "load_checkpoint",
    "load_dataset",
    "parse_case",
    "solve_acopf",
    "solve_dcopf",
    "solve_power_flow",
    "train",
]
