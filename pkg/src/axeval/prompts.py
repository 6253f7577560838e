"""Deterministic rendering of the five prompt templates.

Templates are plain-text files with ``{{slot}}`` placeholders, loaded from a
directory laid out as::

    prompts/p1.txt  p2.txt  p3.txt  judge_help.txt  judge_cons.txt
    prompts/exemplars/p1.jsonl  p2.jsonl

A default set ships with the package. The instruction wording of every
template, and the few-shot exemplars, are editable configuration: swap the
directory to run a different prompt variant. Rendering is a pure function of
the template text and the substituted values; any placeholder left unbound is
an error, never silently emitted.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .dataset import InferenceLabel, NliInstance


class TemplateError(Exception):
    """Raised for missing template files, unbound slots, or bad exemplars."""


class PromptKind(str, Enum):
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    JUDGE_HELP = "JudgeHelp"
    JUDGE_CONS = "JudgeCons"


@dataclass(frozen=True)
class FewShotExample:
    """One in-context example; ``label`` is only needed by the P2 template."""

    premise: str
    hypothesis: str
    knowledge_type: str = ""
    axiom: str = ""
    label: InferenceLabel | None = None

    @classmethod
    def from_json(cls, obj: dict) -> "FewShotExample":
        label = obj.get("label")
        return cls(
            premise=obj.get("premise", ""),
            hypothesis=obj.get("hypothesis", ""),
            knowledge_type=obj.get("knowledge_type", ""),
            axiom=obj.get("axiom", ""),
            label=InferenceLabel.parse(label) if label else None,
        )


@dataclass(frozen=True)
class RenderedPrompt:
    """Final prompt text plus a digest of everything that was substituted."""

    kind: PromptKind
    text: str
    slot_digest: str


_PLACEHOLDER = re.compile(r"\{\{([a-z0-9_]+)\}\}")

TEMPLATE_FILES = {
    "p1": "p1.txt",
    "p2": "p2.txt",
    "p3": "p3.txt",
    "judge_help": "judge_help.txt",
    "judge_cons": "judge_cons.txt",
}


def _digest(slots: dict[str, str]) -> str:
    payload = json.dumps(slots, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _fill(template: str, slots: dict[str, str], name: str) -> str:
    needed = set(_PLACEHOLDER.findall(template))
    missing = needed - set(slots)
    if missing:
        raise TemplateError(f"template {name!r} has unbound slots: {sorted(missing)}")
    # single pass: markers inside substituted values are left alone
    return _PLACEHOLDER.sub(lambda m: slots[m.group(1)], template)


def _require(value: str, what: str) -> str:
    if not value or not value.strip():
        raise TemplateError(f"{what} must be non-empty")
    return value


def _p1_example_block(ex: FewShotExample, position: int) -> str:
    _require(ex.premise, f"exemplar {position}: premise")
    _require(ex.hypothesis, f"exemplar {position}: hypothesis")
    _require(ex.knowledge_type, f"exemplar {position}: knowledge_type")
    _require(ex.axiom, f"exemplar {position}: axiom")
    return (
        f"Premise: {ex.premise}\n"
        f"Hypothesis: {ex.hypothesis}\n"
        f"Type of commonsense knowledge: {ex.knowledge_type}\n"
        f"Commonsense knowledge: {ex.axiom}"
    )


def _p2_example_block(ex: FewShotExample, position: int) -> str:
    _require(ex.premise, f"exemplar {position}: premise")
    _require(ex.hypothesis, f"exemplar {position}: hypothesis")
    _require(ex.axiom, f"exemplar {position}: axiom")
    if ex.label is None:
        raise TemplateError(f"exemplar {position}: label is required for the P2 template")
    return (
        f"Premise: {ex.premise}\n"
        f"Hypothesis: {ex.hypothesis}\n"
        f"Commonsense Knowledge: {ex.axiom}\n"
        f"Output: {ex.label.display}"
    )


class PromptLibrary:
    """Loaded template texts and default exemplars, ready to render."""

    def __init__(
        self,
        templates: dict[str, str],
        exemplars_p1: list[FewShotExample],
        exemplars_p2: list[FewShotExample],
        p1_exemplar_count: int = 3,
        p2_exemplar_count: int = 1,
    ):
        missing = set(TEMPLATE_FILES) - set(templates)
        if missing:
            raise TemplateError(f"missing templates: {sorted(missing)}")
        self.templates = templates
        self.exemplars_p1 = exemplars_p1
        self.exemplars_p2 = exemplars_p2
        self.p1_exemplar_count = p1_exemplar_count
        self.p2_exemplar_count = p2_exemplar_count

    @classmethod
    def from_dir(cls, directory: str | Path, **kwargs) -> "PromptLibrary":
        directory = Path(directory)
        templates = {}
        for key, filename in TEMPLATE_FILES.items():
            path = directory / filename
            if not path.is_file():
                raise TemplateError(f"template file not found: {path}")
            templates[key] = path.read_text(encoding="utf-8")
        exemplars_p1 = _read_exemplars(directory / "exemplars" / "p1.jsonl")
        exemplars_p2 = _read_exemplars(directory / "exemplars" / "p2.jsonl")
        return cls(templates, exemplars_p1, exemplars_p2, **kwargs)

    @classmethod
    def default(cls) -> "PromptLibrary":
        return cls.from_dir(Path(__file__).parent / "data" / "prompts")

    def digests(self) -> dict[str, str]:
        """Per-template sha256 digests, recorded in run manifests."""
        out = {
            key: hashlib.sha256(text.encode("utf-8")).hexdigest()
            for key, text in sorted(self.templates.items())
        }
        out["exemplars_p1"] = _digest(
            {str(i): json.dumps(ex.__dict__, default=str) for i, ex in enumerate(self.exemplars_p1)}
        )
        out["exemplars_p2"] = _digest(
            {str(i): json.dumps(ex.__dict__, default=str) for i, ex in enumerate(self.exemplars_p2)}
        )
        return out

    def render_p1(
        self, instance: NliInstance, exemplars: list[FewShotExample] | None = None
    ) -> RenderedPrompt:
        """Axiom-generation prompt: instruction, N exemplars, open generation slots."""
        exemplars = self.exemplars_p1 if exemplars is None else exemplars
        if len(exemplars) != self.p1_exemplar_count:
            raise TemplateError(
                f"P1 expects exactly {self.p1_exemplar_count} exemplars, got {len(exemplars)}"
            )
        block = "\n\n".join(_p1_example_block(ex, i + 1) for i, ex in enumerate(exemplars))
        slots = {"examples": block, "premise": instance.premise, "hypothesis": instance.hypothesis}
        return RenderedPrompt(PromptKind.P1, _fill(self.templates["p1"], slots, "p1"), _digest(slots))

    def render_p2(
        self,
        instance: NliInstance,
        axiom: str,
        exemplars: list[FewShotExample] | None = None,
    ) -> RenderedPrompt:
        """Inference prompt that appends a generated axiom to the test pair."""
        _require(axiom, "axiom")
        exemplars = self.exemplars_p2 if exemplars is None else exemplars
        if len(exemplars) != self.p2_exemplar_count:
            raise TemplateError(
                f"P2 expects exactly {self.p2_exemplar_count} exemplars, got {len(exemplars)}"
            )
        block = "\n\n".join(_p2_example_block(ex, i + 1) for i, ex in enumerate(exemplars))
        slots = {
            "examples": block,
            "premise": instance.premise,
            "hypothesis": instance.hypothesis,
            "axiom": axiom,
        }
        return RenderedPrompt(PromptKind.P2, _fill(self.templates["p2"], slots, "p2"), _digest(slots))

    def render_p3(self, instance: NliInstance) -> RenderedPrompt:
        """Zero-shot inference prompt requesting a label plus a one-sentence explanation."""
        slots = {"premise": instance.premise, "hypothesis": instance.hypothesis}
        return RenderedPrompt(PromptKind.P3, _fill(self.templates["p3"], slots, "p3"), _digest(slots))

    def render_judge_helpfulness(
        self, instance: NliInstance, axiom: str, gold: InferenceLabel
    ) -> RenderedPrompt:
        """Judge prompt rating how helpful an axiom is given the gold label."""
        _require(axiom, "axiom")
        slots = {
            "premise": instance.premise,
            "hypothesis": instance.hypothesis,
            "axiom": axiom,
            "gold_label": gold.display,
        }
        return RenderedPrompt(
            PromptKind.JUDGE_HELP, _fill(self.templates["judge_help"], slots, "judge_help"), _digest(slots)
        )

    def render_judge_consistency(
        self, instance: NliInstance, axiom_first: str, axiom_other: str
    ) -> RenderedPrompt:
        """Judge prompt rating semantic similarity of a rerun axiom to the first one."""
        _require(axiom_first, "axiom_first")
        _require(axiom_other, "axiom_other")
        slots = {
            "premise": instance.premise,
            "hypothesis": instance.hypothesis,
            "axiom_first": axiom_first,
            "axiom_other": axiom_other,
        }
        return RenderedPrompt(
            PromptKind.JUDGE_CONS, _fill(self.templates["judge_cons"], slots, "judge_cons"), _digest(slots)
        )


def _read_exemplars(path: Path) -> list[FewShotExample]:
    if not path.is_file():
        raise TemplateError(f"exemplar file not found: {path}")
    out = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(FewShotExample.from_json(json.loads(line)))
        except (json.JSONDecodeError, ValueError) as exc:
            raise TemplateError(f"{path}:{line_no}: bad exemplar: {exc}") from exc
    return out
