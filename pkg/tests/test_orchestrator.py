import pytest

from axeval.dataset import InferenceLabel
from axeval.gateway import LlmGateway, ModelConfig, ScriptEntry, StubBackend, StubScriptError
from axeval.orchestrator import (
    PHASE_JUDGE_CONS,
    PHASE_JUDGE_HELP,
    PHASE_P1,
    PHASE_P2,
    PHASE_P3,
    LedgerError,
    Orchestrator,
    PhaseOrderError,
    RunLedger,
)
from axeval.prompts import PromptLibrary
from conftest import (
    JUDGE_CONS_MARKER,
    JUDGE_HELP_MARKER,
    P1_MARKER,
    P2_MARKER,
    P3_MARKER,
    make_instance,
    stub_backend_for,
    synthetic_instances,
)

LIBRARY = PromptLibrary.default()
MODEL = ModelConfig(backend_id="stub", model_name="stub-model")


def _manifest(n: int, runs: int) -> dict:
    return {
        "schema_version": 1,
        "runs": runs,
        "seed": 1,
        "dataset": {"path": "synthetic", "instances": n},
        "gen_model": MODEL.to_json(),
        "judge_model": MODEL.to_json(),
        "templates": LIBRARY.digests(),
    }


def _ledger(tmp_path, instances, runs):
    return RunLedger.open_or_create(tmp_path / "run", instances, _manifest(len(instances), runs))


def _orchestrator(ledger, backend, workers: int = 1) -> Orchestrator:
    gateway = LlmGateway(backend, cache_dir=ledger.cache_dir, backoff_base=0)
    return Orchestrator(ledger, LIBRARY, gateway, MODEL, max_workers=workers)


class TestGeneration:
    def test_record_counts_one_instance(self, tmp_path):
        instances = synthetic_instances(1)
        ledger = _ledger(tmp_path, instances, 5)
        orch = _orchestrator(ledger, stub_backend_for(instances, 5))
        status = orch.run_generation()
        by_name = {row.name: row for row in status.rows}
        assert by_name["p1"].completed == 5
        assert by_name["p3"].completed == 5
        assert by_name["p2"].pending == 5

    def test_raw_text_persisted(self, tmp_path):
        instances = synthetic_instances(1)
        ledger = _ledger(tmp_path, instances, 2)
        _orchestrator(ledger, stub_backend_for(instances, 2)).run_generation()
        for rec in ledger.records(phase=PHASE_P1):
            assert rec.raw_text and "Commonsense knowledge:" in rec.raw_text
            assert rec.payload["axiom"]

    def test_single_run_degenerate(self, tmp_path):
        instances = synthetic_instances(2)
        ledger = _ledger(tmp_path, instances, 1)
        orch = _orchestrator(ledger, stub_backend_for(instances, 1))
        orch.run_generation()
        orch.run_inference()
        status = orch.run_judging()
        cons_rows = [r for r in status.rows if r.phase == PHASE_JUDGE_CONS]
        assert all(row.total == 0 for row in cons_rows)
        help_rows = [r for r in status.rows if r.phase == PHASE_JUDGE_HELP]
        assert all(row.completed == 2 for row in help_rows)


class TestResumption:
    def test_interrupted_generation_resumes_from_ledger(self, tmp_path):
        instances = synthetic_instances(1)
        runs = 5
        ledger = _ledger(tmp_path, instances, runs)
        # first attempt: the p1 sequence dries up after 3 responses
        partial = StubBackend([
            ScriptEntry(contains=[P1_MARKER], responses=[
                f"Commonsense knowledge: rule {k}." for k in (1, 2, 3)]),
            ScriptEntry(contains=[P3_MARKER], responses=[
                f"Neutral: note {k}." for k in (1, 2, 3, 4, 5)]),
        ])
        with pytest.raises(StubScriptError):
            _orchestrator(ledger, partial).run_generation()
        assert len(ledger.records(phase=PHASE_P1)) == 3
        assert len(ledger.records(phase=PHASE_P3)) == 3

        # resume with a fresh, fully scripted backend
        resumed = RunLedger.open_or_create(tmp_path / "run")
        full = stub_backend_for(instances, runs)
        status = _orchestrator(resumed, full).run_generation()
        by_name = {row.name: row for row in status.rows}
        assert by_name["p1"].completed == 5 and by_name["p3"].completed == 5
        # only the four missing slots were requested
        assert full.calls == 4

    def test_rerun_complete_phase_is_noop(self, tmp_path):
        instances = synthetic_instances(2)
        ledger = _ledger(tmp_path, instances, 3)
        orch = _orchestrator(ledger, stub_backend_for(instances, 3))
        orch.run_all()

        fresh = StubBackend()  # any request would raise: no script at all
        reopened = RunLedger.open_or_create(tmp_path / "run")
        status = _orchestrator(reopened, fresh).run_all()
        assert status.total_pending == 0
        assert fresh.calls == 0

    def test_mismatched_manifest_rejected(self, tmp_path):
        instances = synthetic_instances(1)
        _ledger(tmp_path, instances, 3)
        with pytest.raises(LedgerError, match="different configuration"):
            RunLedger.open_or_create(tmp_path / "run", instances, _manifest(1, 4))


class TestInference:
    def test_requires_generation_first(self, tmp_path):
        instances = synthetic_instances(1)
        ledger = _ledger(tmp_path, instances, 2)
        with pytest.raises(PhaseOrderError):
            _orchestrator(ledger, stub_backend_for(instances, 2)).run_inference()

    def test_index_alignment_with_axiom_variants(self, tmp_path):
        instances = synthetic_instances(1)
        runs = 3
        ledger = _ledger(tmp_path, instances, runs)
        # p2 responses keyed on the exact axiom text of each p1 run
        entries = [
            ScriptEntry(contains=[P1_MARKER], responses=[
                f"Commonsense knowledge: Distinct rule number {k}." for k in (1, 2, 3)]),
            ScriptEntry(contains=[P3_MARKER], responses=["Neutral: n."] * runs),
        ] + [
            ScriptEntry(
                contains=[P2_MARKER, f"Distinct rule number {k}."],
                responses=[f"Entailment: derived from rule {k}"],
            )
            for k in (1, 2, 3)
        ]
        orch = _orchestrator(ledger, StubBackend(entries))
        orch.run_generation()
        orch.run_inference()
        for k in (1, 2, 3):
            record = ledger.get((instances[0].id, PHASE_P2, None, k))
            assert record.payload["explanation"] == f"derived from rule {k}"

    def test_excluded_p1_propagates_to_p2(self, tmp_path):
        instances = synthetic_instances(1)
        runs = 3
        ledger = _ledger(tmp_path, instances, runs)
        entries = [
            # run 2 is blank twice (initial + re-query) -> excluded
            ScriptEntry(contains=[P1_MARKER], responses=[
                "Commonsense knowledge: rule one.",
                "   ", "   ",
                "Commonsense knowledge: rule three.",
            ]),
            ScriptEntry(contains=[P3_MARKER], responses=["Neutral: x."] * runs),
            ScriptEntry(contains=[P2_MARKER], responses=["Entailment: fine"] * runs),
        ]
        backend = StubBackend(entries)
        orch = _orchestrator(ledger, backend)
        orch.run_generation()
        p1_run2 = ledger.get((instances[0].id, PHASE_P1, None, 2))
        assert not p1_run2.ok and "unparseable twice" in p1_run2.error

        p2_calls_before = backend.calls
        orch.run_inference()
        p2_run2 = ledger.get((instances[0].id, PHASE_P2, None, 2))
        assert not p2_run2.ok and "propagated" in p2_run2.error
        # only the two non-excluded runs hit the backend
        assert backend.calls - p2_calls_before == 2

    def test_requery_disabled_excludes_on_first_failure(self, tmp_path):
        instances = synthetic_instances(1)
        ledger = _ledger(tmp_path, instances, 1)
        backend = StubBackend([
            ScriptEntry(contains=[P1_MARKER], responses=["  ", "never consumed"]),
            ScriptEntry(contains=[P3_MARKER], responses=["Neutral: n."]),
        ])
        gateway = LlmGateway(backend, cache_dir=ledger.cache_dir, backoff_base=0)
        orch = Orchestrator(ledger, LIBRARY, gateway, MODEL, requery_unparseable=False)
        orch.run_generation()
        record = ledger.get((instances[0].id, PHASE_P1, None, 1))
        assert not record.ok
        assert backend.calls == 2  # one p1 attempt, one p3 attempt

    def test_request_count_scales_with_instances_and_runs(self, tmp_path):
        instances = synthetic_instances(2)
        runs = 5
        ledger = _ledger(tmp_path, instances, runs)
        backend = stub_backend_for(instances, runs)
        orch = _orchestrator(ledger, backend)
        orch.run_generation()
        before = backend.calls
        orch.run_inference()
        assert backend.calls - before == len(instances) * runs


class TestJudging:
    def test_call_counts(self, tmp_path):
        instances = synthetic_instances(3)
        runs = 5
        ledger = _ledger(tmp_path, instances, runs)
        backend = stub_backend_for(instances, runs)
        orch = _orchestrator(ledger, backend)
        orch.run_generation()
        orch.run_inference()
        before = backend.calls
        orch.run_judging()
        n = len(instances)
        # per source: one helpfulness call plus R-1 similarity calls per instance
        assert backend.calls - before == 2 * (n + (runs - 1) * n)

    def test_identical_axioms_rated_ten(self, tmp_path):
        instances = [make_instance(0, InferenceLabel.ENTAILMENT)]
        runs = 5
        ledger = _ledger(tmp_path, instances, runs)
        entries = [
            ScriptEntry(contains=[P1_MARKER], responses=[
                "Commonsense knowledge: The same rule."] * runs),
            ScriptEntry(contains=[P3_MARKER], responses=[
                f"Entailment: same reasoning {k}." for k in range(runs)]),
            ScriptEntry(contains=[P2_MARKER], responses=["Entailment: ok"] * runs),
            ScriptEntry(contains=[JUDGE_HELP_MARKER], responses=["6: adequate"] * 2),
            ScriptEntry(contains=[JUDGE_CONS_MARKER], responses=["10: identical"] * 8),
        ]
        orch = _orchestrator(ledger, StubBackend(entries))
        orch.run_all()
        cons = ledger.records(phase=PHASE_JUDGE_CONS, source="P1")
        assert [rec.payload["rating"] for rec in cons] == [10, 10, 10, 10]
        help_rec = ledger.get((instances[0].id, PHASE_JUDGE_HELP, "P1", 1))
        assert help_rec.payload["rating"] == 6

    def test_requires_both_generation_phases(self, tmp_path):
        instances = synthetic_instances(1)
        ledger = _ledger(tmp_path, instances, 2)
        with pytest.raises(PhaseOrderError):
            _orchestrator(ledger, stub_backend_for(instances, 2)).run_judging()

    def test_bare_label_p3_yields_judge_exclusion(self, tmp_path):
        instances = synthetic_instances(1)
        runs = 2
        ledger = _ledger(tmp_path, instances, runs)
        entries = [
            ScriptEntry(contains=[P1_MARKER], responses=[
                f"Commonsense knowledge: rule {k}." for k in (1, 2)]),
            # bare labels: no explanation text to judge
            ScriptEntry(contains=[P3_MARKER], responses=["Neutral", "Neutral"]),
            ScriptEntry(contains=[P2_MARKER], responses=["Entailment: e"] * runs),
            ScriptEntry(contains=[JUDGE_HELP_MARKER], responses=["7: fine"]),
            ScriptEntry(contains=[JUDGE_CONS_MARKER], responses=["9: close"]),
        ]
        orch = _orchestrator(ledger, StubBackend(entries))
        orch.run_all()
        p3_help = ledger.get((instances[0].id, PHASE_JUDGE_HELP, "P3", 1))
        assert not p3_help.ok and "no judgeable text" in p3_help.error
        p3_cons = ledger.records(phase=PHASE_JUDGE_CONS, source="P3")
        assert all(not rec.ok for rec in p3_cons)
        p1_help = ledger.get((instances[0].id, PHASE_JUDGE_HELP, "P1", 1))
        assert p1_help.ok


class TestConcurrency:
    def test_worker_pool_matches_serial_counts(self, tmp_path):
        instances = synthetic_instances(6)
        runs = 3
        ledger = _ledger(tmp_path, instances, runs)
        orch = _orchestrator(ledger, stub_backend_for(instances, runs), workers=4)
        status = orch.run_all()
        assert status.total_pending == 0
        assert status.total_excluded == 0
        by_name = {row.name: row for row in status.rows}
        assert by_name["p1"].completed == 18
        assert by_name["judge_cons[P1]"].completed == 12


class TestLedger:
    def test_duplicate_append_rejected(self, tmp_path):
        instances = synthetic_instances(1)
        ledger = _ledger(tmp_path, instances, 2)
        from axeval.orchestrator import LedgerRecord

        record = LedgerRecord(instance_id=instances[0].id, phase=PHASE_P1, index=1)
        ledger.append(record)
        with pytest.raises(LedgerError, match="duplicate"):
            ledger.append(record)

    def test_records_survive_reopen(self, tmp_path):
        instances = synthetic_instances(2)
        ledger = _ledger(tmp_path, instances, 2)
        orch = _orchestrator(ledger, stub_backend_for(instances, 2))
        orch.run_generation()
        reopened = RunLedger.open_or_create(tmp_path / "run")
        assert len(reopened.records(phase=PHASE_P1)) == 4
        assert reopened.instances == instances
        assert reopened.digest == ledger.digest

    def test_open_missing_dir_fails(self, tmp_path):
        with pytest.raises(LedgerError, match="no run found"):
            RunLedger.open_or_create(tmp_path / "absent")
