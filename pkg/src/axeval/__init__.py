"""Batch harness for generating, judging, and scoring commonsense axioms in NLI."""

from .dataset import (
    ClassCounts,
    DatasetError,
    InferenceLabel,
    LoadResult,
    NliInstance,
    SampleShortfallError,
    class_distribution,
    load_dataset,
    sample_stratified,
)
from .gateway import (
    CompletionRequest,
    CompletionResult,
    HttpBackend,
    LlmGateway,
    ModelConfig,
    ScriptEntry,
    StubBackend,
    stub_register,
)
from .metrics import (
    ConsistencyAnnotation,
    ConsistencySummary,
    ErrorMatrix,
    FactualitySummary,
    HelpfulnessAnnotation,
    binarize_consistency,
    binarize_helpfulness,
    class_accuracy,
    consistency_score,
    consistency_summary,
    error_matrix,
    factuality_summary,
    net_consistently_correct_rate,
    net_correct_rate,
    per_class_breakdown,
)
from .orchestrator import Orchestrator, RunLedger
from .parsing import parse_axiom, parse_label, parse_rating
from .prompts import FewShotExample, PromptLibrary, RenderedPrompt
from .reporting import build_report, render_csvs, render_markdown, write_report

__version__ = "0.1.0"

__all__ = [
    "ClassCounts",
    "CompletionRequest",
    "CompletionResult",
    "ConsistencyAnnotation",
    "ConsistencySummary",
    "DatasetError",
    "ErrorMatrix",
    "FactualitySummary",
    "FewShotExample",
    "HelpfulnessAnnotation",
    "HttpBackend",
    "InferenceLabel",
    "LlmGateway",
    "LoadResult",
    "ModelConfig",
    "NliInstance",
    "Orchestrator",
    "PromptLibrary",
    "RenderedPrompt",
    "RunLedger",
    "SampleShortfallError",
    "ScriptEntry",
    "StubBackend",
    "binarize_consistency",
    "binarize_helpfulness",
    "build_report",
    "class_accuracy",
    "class_distribution",
    "consistency_score",
    "consistency_summary",
    "error_matrix",
    "factuality_summary",
    "load_dataset",
    "net_consistently_correct_rate",
    "net_correct_rate",
    "parse_axiom",
    "parse_label",
    "parse_rating",
    "per_class_breakdown",
    "render_csvs",
    "render_markdown",
    "sample_stratified",
    "stub_register",
    "write_report",
]
