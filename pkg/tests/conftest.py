"""Shared fixtures: synthetic corpora and stub scripts for offline runs."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from axeval.dataset import InferenceLabel, NliInstance
from axeval.gateway import ScriptEntry, StubBackend

LABEL_CYCLE = (
    InferenceLabel.ENTAILMENT,
    InferenceLabel.CONTRADICTION,
    InferenceLabel.NEUTRAL,
)

# instruction openers unique to each prompt template, used as stub matchers
P1_MARKER = "Provide the commonsense knowledge"
P2_MARKER = "predict the textual entailment relationship"
P3_MARKER = "Format the response as"
JUDGE_HELP_MARKER = "Rate how helpful"
JUDGE_CONS_MARKER = "rate how similar"


def make_instance(i: int, label: InferenceLabel | None = None) -> NliInstance:
    label = label or LABEL_CYCLE[i % 3]
    return NliInstance(
        id=f"syn-{i:03d}",
        premise=f"Person {i} is doing activity number {i} in scene {i}.",
        hypothesis=f"Claim hyp-{i:03d} about the scene holds.",
        gold_label=label,
    )


def synthetic_instances(n: int) -> list[NliInstance]:
    return [make_instance(i) for i in range(n)]


def _pick_label(i: int, run: int, salt: int) -> str:
    return LABEL_CYCLE[(i + run + salt) % 3].display


def _rating(i: int, j: int, salt: int) -> int:
    return (i * 7 + j * 3 + salt) % 10 + 1


def stub_script_for(instances: list[NliInstance], runs: int) -> list[dict]:
    """A complete deterministic script covering every phase of an experiment.

    Matchers key on each instance's hypothesis text plus the prompt kind's
    instruction text, so scripted sequences stay per-instance even under
    concurrency. Hypotheses must therefore be unique within ``instances``.
    """
    entries: list[dict] = []
    for i, inst in enumerate(instances):
        token = inst.hypothesis
        entries.append({
            "contains": [P1_MARKER, token],
            "responses": [
                f"Type of commonsense knowledge: kind-{i % 4}\n"
                f"Commonsense knowledge: Scenario {token} follows rule {i} variant {k}."
                for k in range(1, runs + 1)
            ],
        })
        entries.append({
            "contains": [P3_MARKER, token],
            "responses": [
                f"{_pick_label(i, k, 1)}: reasoning for {token} variant {k}."
                for k in range(1, runs + 1)
            ],
        })
        entries.append({
            "contains": [P2_MARKER, token],
            "responses": [
                f"{_pick_label(i, k, 2)}: using the supplied rule, variant {k}."
                for k in range(1, runs + 1)
            ],
        })
        entries.append({
            "contains": [JUDGE_HELP_MARKER, token],
            # consumed twice per instance: first for the generated-axiom
            # source, then for the post-prediction explanation source
            "responses": [f"{_rating(i, 1, 3)}: concise.", f"{_rating(i, 1, 4)}: restates."],
        })
        if runs >= 2:
            entries.append({
                "contains": [JUDGE_CONS_MARKER, token],
                "responses": [
                    f"{_rating(i, j, salt)}: similarity note."
                    for salt in (5, 6)
                    for j in range(2, runs + 1)
                ],
            })
    return entries


def stub_backend_for(instances: list[NliInstance], runs: int) -> StubBackend:
    return StubBackend([ScriptEntry.from_json(e) for e in stub_script_for(instances, runs)])


def write_stub_script(path: Path, instances: list[NliInstance], runs: int) -> Path:
    path.write_text(json.dumps(stub_script_for(instances, runs), indent=1), encoding="utf-8")
    return path


@pytest.fixture
def three_instances() -> list[NliInstance]:
    return synthetic_instances(3)
