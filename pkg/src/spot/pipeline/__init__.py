"""Surgical data rectification: elicit, rectify, LCS-filter, persist."""

from .dataset import (
    ContrastivePair,
    FilterResult,
    change_ratio_histogram,
    filter_pairs,
    read_dataset,
    write_dataset,
    write_histogram,
)
from .elicit import Elicited, ElicitResult, RemoteGenerator, SamplingConfig, elicit_errors, rectify_failures
from .lcs import change_ratio, lcs_length
from .oracle import (
    END_MARKER,
    START_MARKER,
    CallableOracle,
    ChatClient,
    HttpOracle,
    MockOracle,
    OracleRequest,
    build_request,
    parse_corrected,
    rectify,
)
from .verify import Task, verify

__all__ = [
    "CallableOracle",
    "ChatClient",
    "ContrastivePair",
    "END_MARKER",
    "ElicitResult",
    "Elicited",
    "FilterResult",
    "HttpOracle",
    "MockOracle",
    "OracleRequest",
    "RemoteGenerator",
    "START_MARKER",
    "SamplingConfig",
    "Task",
    "build_request",
    "change_ratio",
    "change_ratio_histogram",
    "elicit_errors",
    "filter_pairs",
    "lcs_length",
    "parse_corrected",
    "read_dataset",
    "rectify",
    "rectify_failures",
    "verify",
    "write_dataset",
    "write_histogram",
]
