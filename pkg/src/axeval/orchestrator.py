"""Experiment execution over a persistent, resumable run ledger.

A run directory holds::

    manifest.json     experiment configuration and template digests
    instances.jsonl   the sampled premise-hypothesis pairs (generic layout)
    records.jsonl     append-only; one object per (instance, phase, index)
    cache/            raw completions, written before any parsing happens

Phases run strictly in order (axiom generation -> axiom-augmented inference
-> judging) but instances are independent and may proceed concurrently.
Every slot is attempted at most once per run directory: re-running a phase
over a complete ledger is a no-op, and interrupted runs resume from the
ledger plus the response cache.

A response that fails to parse is re-queried once with a fresh sample (its
cache slot is invalidated first); a second failure marks the slot excluded,
and exclusions propagate to dependent slots instead of cascading errors.
"""

from __future__ import annotations

import hashlib
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .dataset import NliInstance, read_instances
from .gateway import (
    CompletionRequest,
    GatewayError,
    LlmGateway,
    ModelConfig,
    StubScriptError,
)
from .metrics import SOURCE_P1, SOURCE_P3
from .parsing import ParseError, parse_axiom, parse_label, parse_rating
from .prompts import PromptLibrary, RenderedPrompt

PHASE_P1 = "p1"
PHASE_P2 = "p2"
PHASE_P3 = "p3"
PHASE_JUDGE_HELP = "judge_help"
PHASE_JUDGE_CONS = "judge_cons"

STATUS_OK = "ok"
STATUS_EXCLUDED = "excluded"


class LedgerError(Exception):
    """Raised for corrupt run directories or mismatched configurations."""


class PhaseOrderError(LedgerError):
    """A phase was requested before its prerequisite phase completed."""


RecordKey = tuple[str, str, str | None, int]


@dataclass(frozen=True)
class LedgerRecord:
    """One persisted result slot; ``index`` is the run index (or j for rerun
    comparisons, with the reference fixed at run 1)."""

    instance_id: str
    phase: str
    index: int
    source: str | None = None
    status: str = STATUS_OK
    raw_text: str | None = None
    payload: dict | None = None
    error: str | None = None

    @property
    def key(self) -> RecordKey:
        return (self.instance_id, self.phase, self.source, self.index)

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "phase": self.phase,
            "source": self.source,
            "index": self.index,
            "status": self.status,
            "raw_text": self.raw_text,
            "payload": self.payload,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LedgerRecord":
        return cls(
            instance_id=obj["instance_id"],
            phase=obj["phase"],
            index=obj["index"],
            source=obj.get("source"),
            status=obj.get("status", STATUS_OK),
            raw_text=obj.get("raw_text"),
            payload=obj.get("payload"),
            error=obj.get("error"),
        )


def manifest_digest(manifest: dict) -> str:
    canonical = json.dumps(manifest, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RunLedger:
    """Append-only store of every raw and parsed model interaction."""

    def __init__(self, run_dir: str | Path, manifest: dict, instances: list[NliInstance]):
        self.run_dir = Path(run_dir)
        self.manifest = manifest
        self.instances = instances
        self._records: dict[RecordKey, LedgerRecord] = {}
        self._lock = threading.Lock()
        self._records_path = self.run_dir / "records.jsonl"

    # -- construction -------------------------------------------------------

    @classmethod
    def open_or_create(
        cls, run_dir: str | Path, instances: list[NliInstance] | None = None,
        manifest: dict | None = None,
    ) -> "RunLedger":
        """Create a fresh run directory, or reopen one for resumption.

        Reopening with a manifest that differs from the stored one is an
        error: a run directory is bound to one experiment configuration.
        """
        run_dir = Path(run_dir)
        manifest_path = run_dir / "manifest.json"
        if manifest_path.is_file():
            stored = json.loads(manifest_path.read_text(encoding="utf-8"))
            if manifest is not None and manifest != stored:
                raise LedgerError(
                    f"run directory {run_dir} was created with a different configuration; "
                    "use a new directory or matching settings"
                )
            loaded_instances = read_instances(run_dir / "instances.jsonl")
            ledger = cls(run_dir, stored, loaded_instances)
            ledger._load_records()
            return ledger

        if instances is None or manifest is None:
            raise LedgerError(f"no run found at {run_dir} (and nothing to create it from)")
        ids = [inst.id for inst in instances]
        if len(ids) != len(set(ids)):
            raise LedgerError("instance ids must be unique within a run")
        run_dir.mkdir(parents=True, exist_ok=True)
        from .dataset import write_generic_jsonl

        write_generic_jsonl(run_dir / "instances.jsonl", instances)
        manifest_path.write_text(
            json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        return cls(run_dir, manifest, list(instances))

    def _load_records(self) -> None:
        if not self._records_path.is_file():
            return
        for line_no, line in enumerate(
            self._records_path.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                record = LedgerRecord.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError) as exc:
                raise LedgerError(f"{self._records_path}:{line_no}: corrupt record: {exc}") from exc
            self._records[record.key] = record

    # -- access --------------------------------------------------------------

    @property
    def runs(self) -> int:
        return int(self.manifest["runs"])

    @property
    def cache_dir(self) -> Path:
        return self.run_dir / "cache"

    @property
    def digest(self) -> str:
        return manifest_digest(self.manifest)

    def has(self, key: RecordKey) -> bool:
        with self._lock:
            return key in self._records

    def get(self, key: RecordKey) -> LedgerRecord | None:
        with self._lock:
            return self._records.get(key)

    def append(self, record: LedgerRecord) -> None:
        with self._lock:
            if record.key in self._records:
                raise LedgerError(f"duplicate ledger record for {record.key}")
            with self._records_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")
            self._records[record.key] = record

    def records(
        self, phase: str | None = None, source: str | None = None
    ) -> list[LedgerRecord]:
        """Records filtered by phase/source, sorted for deterministic iteration."""
        with self._lock:
            items = list(self._records.values())
        if phase is not None:
            items = [r for r in items if r.phase == phase]
        if source is not None:
            items = [r for r in items if r.source == source]
        items.sort(key=lambda r: (r.instance_id, r.phase, r.source or "", r.index))
        return items

    # -- status ----------------------------------------------------------------

    def status(self) -> "ExperimentStatus":
        n = len(self.instances)
        r = self.runs
        rows = []
        for phase in (PHASE_P1, PHASE_P2, PHASE_P3):
            rows.append(self._phase_status(phase, None, n * r))
        for source in (SOURCE_P1, SOURCE_P3):
            rows.append(self._phase_status(PHASE_JUDGE_HELP, source, n))
            rows.append(self._phase_status(PHASE_JUDGE_CONS, source, n * (r - 1)))
        return ExperimentStatus(rows=rows)

    def _phase_status(self, phase: str, source: str | None, total: int) -> "PhaseStatus":
        records = self.records(phase=phase, source=source)
        completed = sum(1 for rec in records if rec.ok)
        excluded = sum(1 for rec in records if not rec.ok)
        return PhaseStatus(
            phase=phase, source=source, total=total, completed=completed, excluded=excluded
        )


@dataclass(frozen=True)
class PhaseStatus:
    phase: str
    source: str | None
    total: int
    completed: int
    excluded: int

    @property
    def pending(self) -> int:
        return self.total - self.completed - self.excluded

    @property
    def name(self) -> str:
        return f"{self.phase}[{self.source}]" if self.source else self.phase


@dataclass(frozen=True)
class ExperimentStatus:
    rows: list[PhaseStatus]

    @property
    def total_pending(self) -> int:
        return sum(row.pending for row in self.rows)

    @property
    def total_excluded(self) -> int:
        return sum(row.excluded for row in self.rows)

    def pending_for(self, phases: Iterable[str]) -> int:
        wanted = set(phases)
        return sum(row.pending for row in self.rows if row.phase in wanted)


class Orchestrator:
    """Drives the three-prompt protocol plus judging over one run ledger."""

    def __init__(
        self,
        ledger: RunLedger,
        library: PromptLibrary,
        gen_gateway: LlmGateway,
        gen_model: ModelConfig,
        judge_gateway: LlmGateway | None = None,
        judge_model: ModelConfig | None = None,
        max_workers: int = 1,
        requery_unparseable: bool = True,
    ):
        self.ledger = ledger
        self.library = library
        self.gen_gateway = gen_gateway
        self.gen_model = gen_model
        self.judge_gateway = judge_gateway or gen_gateway
        self.judge_model = judge_model or gen_model
        self.max_workers = max_workers
        self.requery_unparseable = requery_unparseable

    # -- phases -------------------------------------------------------------

    def run_generation(self) -> ExperimentStatus:
        """Collect R axiom generations (P1) and R direct predictions (P3)."""
        self._each_instance(self._generate_one)
        return self.ledger.status()

    def run_inference(self) -> ExperimentStatus:
        """Predict with each generated axiom appended (P2), index-aligned to P1."""
        for inst in self.ledger.instances:
            self._require_complete(inst, PHASE_P1, self.ledger.runs, "axiom generation")
        self._each_instance(self._infer_one)
        return self.ledger.status()

    def run_judging(self) -> ExperimentStatus:
        """Rate reference-axiom helpfulness and rerun similarity for both sources."""
        for inst in self.ledger.instances:
            self._require_complete(inst, PHASE_P1, self.ledger.runs, "axiom generation")
            self._require_complete(inst, PHASE_P3, self.ledger.runs, "direct prediction")
        self._each_instance(self._judge_one)
        return self.ledger.status()

    def run_all(self) -> ExperimentStatus:
        self.run_generation()
        self.run_inference()
        return self.run_judging()

    # -- per-instance workers -------------------------------------------------

    def _generate_one(self, inst: NliInstance) -> None:
        for k in range(1, self.ledger.runs + 1):
            if not self.ledger.has((inst.id, PHASE_P1, None, k)):
                prompt = self.library.render_p1(inst)
                self._record(inst, PHASE_P1, None, k, prompt, self.gen_gateway,
                             self.gen_model, _axiom_payload)
            if not self.ledger.has((inst.id, PHASE_P3, None, k)):
                prompt = self.library.render_p3(inst)
                self._record(inst, PHASE_P3, None, k, prompt, self.gen_gateway,
                             self.gen_model, _label_payload)

    def _infer_one(self, inst: NliInstance) -> None:
        for k in range(1, self.ledger.runs + 1):
            key = (inst.id, PHASE_P2, None, k)
            if self.ledger.has(key):
                continue
            p1 = self.ledger.get((inst.id, PHASE_P1, None, k))
            assert p1 is not None  # guaranteed by _require_complete
            if not p1.ok:
                self.ledger.append(LedgerRecord(
                    instance_id=inst.id, phase=PHASE_P2, index=k,
                    status=STATUS_EXCLUDED,
                    error=f"propagated: p1 run {k} is excluded",
                ))
                continue
            prompt = self.library.render_p2(inst, p1.payload["axiom"])
            self._record(inst, PHASE_P2, None, k, prompt, self.gen_gateway,
                         self.gen_model, _label_payload)

    def _judge_one(self, inst: NliInstance) -> None:
        for source in (SOURCE_P1, SOURCE_P3):
            reference, ref_error = self._axiom_for(inst, source, 1)
            help_key = (inst.id, PHASE_JUDGE_HELP, source, 1)
            if not self.ledger.has(help_key):
                if reference is None:
                    self.ledger.append(LedgerRecord(
                        instance_id=inst.id, phase=PHASE_JUDGE_HELP, source=source, index=1,
                        status=STATUS_EXCLUDED, error=ref_error,
                    ))
                else:
                    prompt = self.library.render_judge_helpfulness(
                        inst, reference, inst.gold_label
                    )
                    self._record(inst, PHASE_JUDGE_HELP, source, 1, prompt,
                                 self.judge_gateway, self.judge_model, _rating_payload)
            for j in range(2, self.ledger.runs + 1):
                cons_key = (inst.id, PHASE_JUDGE_CONS, source, j)
                if self.ledger.has(cons_key):
                    continue
                other, other_error = self._axiom_for(inst, source, j)
                if reference is None or other is None:
                    self.ledger.append(LedgerRecord(
                        instance_id=inst.id, phase=PHASE_JUDGE_CONS, source=source, index=j,
                        status=STATUS_EXCLUDED, error=ref_error or other_error,
                    ))
                    continue
                prompt = self.library.render_judge_consistency(inst, reference, other)
                self._record(inst, PHASE_JUDGE_CONS, source, j, prompt,
                             self.judge_gateway, self.judge_model, _rating_payload,
                             run_index=j)

    # -- helpers -----------------------------------------------------------

    def _axiom_for(self, inst: NliInstance, source: str, index: int) -> tuple[str | None, str | None]:
        """Judgeable text for a generation slot: the P1 axiom, or the P3
        explanation treated as the model's implicit post-prediction reasoning."""
        phase = PHASE_P1 if source == SOURCE_P1 else PHASE_P3
        record = self.ledger.get((inst.id, phase, None, index))
        if record is None or not record.ok:
            return None, f"{phase} run {index} is excluded"
        if source == SOURCE_P1:
            text = record.payload["axiom"]
        else:
            text = record.payload["explanation"]
        if not text or not text.strip():
            return None, f"{phase} run {index} has no judgeable text"
        return text, None

    def _require_complete(self, inst: NliInstance, phase: str, runs: int, what: str) -> None:
        for k in range(1, runs + 1):
            if not self.ledger.has((inst.id, phase, None, k)):
                raise PhaseOrderError(
                    f"{what} is incomplete for instance {inst.id!r} "
                    f"(missing run {k}); run the earlier phase first"
                )

    def _each_instance(self, fn: Callable[[NliInstance], None]) -> None:
        if self.max_workers <= 1:
            for inst in self.ledger.instances:
                fn(inst)
            return
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            futures = [pool.submit(fn, inst) for inst in self.ledger.instances]
            for future in futures:
                future.result()

    def _record(
        self,
        inst: NliInstance,
        phase: str,
        source: str | None,
        index: int,
        prompt: RenderedPrompt,
        gateway: LlmGateway,
        model: ModelConfig,
        payload_fn: Callable[[str], dict],
        run_index: int | None = None,
    ) -> None:
        request = CompletionRequest(
            prompt=prompt, model=model, run_index=run_index if run_index is not None else index
        )
        try:
            result = gateway.cached_complete(request)
        except StubScriptError:
            raise  # a hole in the script is a configuration error, not a data point
        except GatewayError as exc:
            self.ledger.append(LedgerRecord(
                instance_id=inst.id, phase=phase, source=source, index=index,
                status=STATUS_EXCLUDED, error=f"backend failure: {exc}",
            ))
            return

        raw = result.raw_text
        try:
            payload = payload_fn(raw)
        except ParseError as first_error:
            if not self.requery_unparseable:
                self.ledger.append(LedgerRecord(
                    instance_id=inst.id, phase=phase, source=source, index=index,
                    status=STATUS_EXCLUDED, raw_text=raw, error=str(first_error),
                ))
                return
            try:
                retry = gateway.refresh(request)
            except StubScriptError:
                raise
            except GatewayError as exc:
                self.ledger.append(LedgerRecord(
                    instance_id=inst.id, phase=phase, source=source, index=index,
                    status=STATUS_EXCLUDED, raw_text=raw,
                    error=f"unparseable ({first_error}); re-query failed: {exc}",
                ))
                return
            raw = retry.raw_text
            try:
                payload = payload_fn(raw)
            except ParseError as second_error:
                self.ledger.append(LedgerRecord(
                    instance_id=inst.id, phase=phase, source=source, index=index,
                    status=STATUS_EXCLUDED, raw_text=raw,
                    error=f"unparseable twice: {first_error}; then: {second_error}",
                ))
                return

        self.ledger.append(LedgerRecord(
            instance_id=inst.id, phase=phase, source=source, index=index,
            status=STATUS_OK, raw_text=raw, payload=payload,
        ))


def _axiom_payload(raw: str) -> dict:
    parsed = parse_axiom(raw)
    return {
        "knowledge_type": parsed.knowledge_type,
        "axiom": parsed.axiom,
        "sentence_count": parsed.sentence_count,
    }


def _label_payload(raw: str) -> dict:
    parsed = parse_label(raw)
    return {"label": parsed.label.value, "explanation": parsed.explanation}


def _rating_payload(raw: str) -> dict:
    parsed = parse_rating(raw)
    return {"rating": parsed.rating, "explanation": parsed.explanation}
