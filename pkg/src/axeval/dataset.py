"""NLI dataset loading, label normalization, and stratified sampling.

Input corpora are line-delimited JSON. Three field layouts are supported:

* ``snli-jsonl``    -- {sentence1, sentence2, gold_label, pairID}
* ``anli-jsonl``    -- {premise, hypothesis, label in {e,n,c}, uid}
* ``generic-jsonl`` -- {premise, hypothesis, label, id}

Records without a usable label (e.g. the "-" placeholder SNLI uses when
annotators disagreed) are dropped and counted, never silently ignored.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence


class DatasetError(Exception):
    """Raised for unreadable, malformed, or insufficient input data."""


class SampleShortfallError(DatasetError):
    """A stratum does not contain enough instances to meet its target."""

    def __init__(self, label: "InferenceLabel", needed: int, available: int):
        self.label = label
        self.needed = needed
        self.available = available
        super().__init__(
            f"insufficient instances for class '{label.value}': "
            f"need {needed}, have {available} (short {needed - available})"
        )


class InferenceLabel(str, Enum):
    """The three-way inference relationship between a premise and hypothesis."""

    ENTAILMENT = "entailment"
    CONTRADICTION = "contradiction"
    NEUTRAL = "neutral"

    @property
    def display(self) -> str:
        """Capitalized form used in prompts and report tables."""
        return self.value.capitalize()

    @classmethod
    def parse(cls, text: str) -> "InferenceLabel":
        """Normalize a raw label string; raises ValueError outside the alias set."""
        key = text.strip().lower()
        try:
            return _LABEL_ALIASES[key]
        except KeyError:
            raise ValueError(f"not a recognized inference label: {text!r}") from None


_LABEL_ALIASES = {
    "entailment": InferenceLabel.ENTAILMENT,
    "e": InferenceLabel.ENTAILMENT,
    "contradiction": InferenceLabel.CONTRADICTION,
    "c": InferenceLabel.CONTRADICTION,
    "neutral": InferenceLabel.NEUTRAL,
    "n": InferenceLabel.NEUTRAL,
}

LABELS = (
    InferenceLabel.ENTAILMENT,
    InferenceLabel.CONTRADICTION,
    InferenceLabel.NEUTRAL,
)


class DataSource(str, Enum):
    SNLI = "snli"
    ANLI = "anli"
    OTHER = "other"


@dataclass(frozen=True)
class NliInstance:
    """One premise-hypothesis pair with its gold label and a stable id."""

    id: str
    premise: str
    hypothesis: str
    gold_label: InferenceLabel
    source: DataSource = DataSource.OTHER

    def __post_init__(self):
        if not self.id.strip():
            raise ValueError("instance id must be non-empty")
        if not self.premise.strip():
            raise ValueError(f"instance {self.id}: premise is empty")
        if not self.hypothesis.strip():
            raise ValueError(f"instance {self.id}: hypothesis is empty")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "premise": self.premise,
            "hypothesis": self.hypothesis,
            "label": self.gold_label.value,
            "source": self.source.value,
        }


@dataclass(frozen=True)
class ClassCounts:
    """Per-class instance counts; ``total`` is always the sum of the three."""

    entailment: int
    contradiction: int
    neutral: int

    def __post_init__(self):
        for name in ("entailment", "contradiction", "neutral"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} count must be >= 0")

    @property
    def total(self) -> int:
        return self.entailment + self.contradiction + self.neutral

    def of(self, label: InferenceLabel) -> int:
        return getattr(self, label.value)

    def to_json(self) -> dict:
        return {
            "entailment": self.entailment,
            "contradiction": self.contradiction,
            "neutral": self.neutral,
            "total": self.total,
        }

    @classmethod
    def from_triplet(cls, values: Sequence[int]) -> "ClassCounts":
        if len(values) != 3:
            raise ValueError("expected exactly three counts: entailment,contradiction,neutral")
        return cls(*values)


# Published per-class sample sizes for the two benchmark corpora.
DEFAULT_TARGETS = {
    "snli-jsonl": ClassCounts(689, 651, 660),
    "anli-jsonl": ClassCounts(771, 585, 644),
}

_FORMATS = {
    "snli-jsonl": ("sentence1", "sentence2", "gold_label", "pairID", DataSource.SNLI),
    "anli-jsonl": ("premise", "hypothesis", "label", "uid", DataSource.ANLI),
    "generic-jsonl": ("premise", "hypothesis", "label", "id", DataSource.OTHER),
}

DATASET_FORMATS = tuple(_FORMATS)


@dataclass(frozen=True)
class SkippedLine:
    line_no: int
    reason: str


@dataclass
class LoadResult:
    """Loaded instances plus an accounting of every dropped input line."""

    instances: list[NliInstance]
    skipped: list[SkippedLine] = field(default_factory=list)

    @property
    def skip_count(self) -> int:
        return len(self.skipped)


def load_dataset(path: str | Path, format: str) -> LoadResult:
    """Read a line-delimited JSON corpus and normalize it to NliInstance records.

    Lines whose label is missing or outside the alias set, or whose premise or
    hypothesis is blank, are skipped and reported. Blank lines are ignored
    entirely. Malformed JSON aborts with the offending line number.
    """
    if format not in _FORMATS:
        raise DatasetError(f"unknown dataset format: {format!r}")
    premise_key, hypothesis_key, label_key, id_key, source = _FORMATS[format]

    path = Path(path)
    try:
        raw_lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc

    instances: list[NliInstance] = []
    skipped: list[SkippedLine] = []
    seen_ids: set[str] = set()

    for line_no, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{line_no}: malformed JSON line: {exc}") from exc
        if not isinstance(obj, dict):
            raise DatasetError(f"{path}:{line_no}: expected a JSON object")

        raw_label = obj.get(label_key)
        if raw_label is None:
            skipped.append(SkippedLine(line_no, "missing label"))
            continue
        try:
            label = InferenceLabel.parse(str(raw_label))
        except ValueError:
            skipped.append(SkippedLine(line_no, f"invalid label {raw_label!r}"))
            continue

        premise = str(obj.get(premise_key, "") or "")
        hypothesis = str(obj.get(hypothesis_key, "") or "")
        if not premise.strip():
            skipped.append(SkippedLine(line_no, "empty premise"))
            continue
        if not hypothesis.strip():
            skipped.append(SkippedLine(line_no, "empty hypothesis"))
            continue

        native_id = obj.get(id_key)
        instance_id = str(native_id) if native_id else f"{source.value}:{line_no}"
        if instance_id in seen_ids:
            raise DatasetError(f"{path}:{line_no}: duplicate instance id {instance_id!r}")
        seen_ids.add(instance_id)

        # generic files written by this tool carry the original source tag
        record_source = source
        if source is DataSource.OTHER and "source" in obj:
            try:
                record_source = DataSource(str(obj["source"]))
            except ValueError:
                record_source = DataSource.OTHER

        instances.append(
            NliInstance(
                id=instance_id,
                premise=premise,
                hypothesis=hypothesis,
                gold_label=label,
                source=record_source,
            )
        )

    if not instances:
        raise DatasetError(f"{path}: no valid instances found ({len(skipped)} lines skipped)")
    return LoadResult(instances=instances, skipped=skipped)


def class_distribution(instances: Iterable[NliInstance]) -> ClassCounts:
    """Exact per-class tally of a corpus."""
    counts = {label: 0 for label in LABELS}
    for inst in instances:
        counts[inst.gold_label] += 1
    return ClassCounts(
        entailment=counts[InferenceLabel.ENTAILMENT],
        contradiction=counts[InferenceLabel.CONTRADICTION],
        neutral=counts[InferenceLabel.NEUTRAL],
    )


def sample_stratified(
    instances: Sequence[NliInstance], target: ClassCounts, seed: int
) -> list[NliInstance]:
    """Draw a seeded uniform sample without replacement from each class.

    The same (instances, target, seed) triple always yields the same sample;
    output preserves the input ordering of the selected members.
    """
    by_class: dict[InferenceLabel, list[int]] = {label: [] for label in LABELS}
    for idx, inst in enumerate(instances):
        by_class[inst.gold_label].append(idx)

    for label in LABELS:
        needed = target.of(label)
        available = len(by_class[label])
        if available < needed:
            raise SampleShortfallError(label, needed, available)

    rng = random.Random(seed)
    chosen: list[int] = []
    for label in LABELS:
        chosen.extend(rng.sample(by_class[label], target.of(label)))
    chosen.sort()
    return [instances[i] for i in chosen]


def write_generic_jsonl(path: str | Path, instances: Iterable[NliInstance]) -> None:
    """Persist instances in the generic-jsonl layout (one object per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json(), ensure_ascii=False) + "\n")


def read_instances(path: str | Path) -> list[NliInstance]:
    """Load a generic-jsonl file, keeping any recorded source tag."""
    return load_dataset(path, "generic-jsonl").instances
