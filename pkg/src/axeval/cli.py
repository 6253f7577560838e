"""Command-line entry point: sample datasets, run experiment phases, emit reports.

Exit codes follow a scripted-pipeline contract: 0 on clean completion, 2 when
the run completed but some records were excluded, 1 on fatal errors. Options
may also come from a TOML or JSON config file; explicit flags win.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import NoReturn

import click

from . import dataset as ds
from .gateway import HttpBackend, LlmGateway, ModelConfig, StubBackend
from .orchestrator import LedgerError, Orchestrator, PhaseOrderError, RunLedger
from .prompts import PromptLibrary, TemplateError
from .reporting import REPORT_FORMATS, build_report, write_report

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter version
    import tomli as tomllib

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_EXCLUSIONS = 2


def _fail(message: str) -> NoReturn:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_FATAL)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        if p.suffix == ".toml":
            with p.open("rb") as fh:
                return tomllib.load(fh)
        return json.loads(p.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot read config {p}: {exc}")


def _pick(flag_value, config: dict, key: str, default):
    """Flag beats config file beats built-in default."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def _parse_targets(raw) -> ds.ClassCounts:
    if isinstance(raw, ds.ClassCounts):
        return raw
    if isinstance(raw, (list, tuple)):
        return ds.ClassCounts.from_triplet([int(v) for v in raw])
    parts = [p.strip() for p in str(raw).split(",")]
    try:
        return ds.ClassCounts.from_triplet([int(p) for p in parts])
    except ValueError as exc:
        raise click.ClickException(f"bad --targets value {raw!r}: {exc}")


def _model_config(prefix: str, config: dict, *, model, endpoint, backend_id,
                  temperature, max_tokens, timeout) -> ModelConfig:
    base = dict(config.get(f"{prefix}_model", {}))
    if model is not None:
        base["model_name"] = model
    if endpoint is not None:
        base["endpoint_url"] = endpoint
    if backend_id is not None:
        base["backend_id"] = backend_id
    if temperature is not None:
        base["temperature"] = temperature
    if max_tokens is not None:
        base["max_tokens"] = max_tokens
    if timeout is not None:
        base["timeout"] = timeout
    base.setdefault("backend_id", prefix)
    base.setdefault("model_name", f"{prefix}-model")
    try:
        return ModelConfig(**base)
    except (TypeError, ValueError) as exc:
        raise click.ClickException(f"bad {prefix} model configuration: {exc}")


@click.group()
@click.version_option(package_name="axeval")
def cli():
    """Generate commonsense axioms for NLI pairs, judge them, and report metrics."""


@cli.command()
@click.option("--dataset", type=click.Path(path_type=Path), default=None, help="Input corpus (jsonl).")
@click.option("--format", "fmt", type=click.Choice(ds.DATASET_FORMATS), default=None,
              help="Input field layout.")
@click.option("--targets", default=None,
              help="Per-class sample sizes as 'entailment,contradiction,neutral'.")
@click.option("--seed", type=int, default=None, help="Sampling seed.")
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="Where to write the generic-jsonl sample.")
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="TOML or JSON config file; flags override it.")
def sample(dataset, fmt, targets, seed, out_path, config_path):
    """Draw a reproducible stratified sample and write it as generic-jsonl."""
    config = _load_config(config_path)
    dataset = _pick(dataset, config, "dataset", None)
    fmt = _pick(fmt, config, "format", "generic-jsonl")
    seed = int(_pick(seed, config, "seed", 17))
    out_path = _pick(out_path, config, "out", None)
    targets = _pick(targets, config, "targets", None)

    if dataset is None:
        _fail("--dataset is required")
    if out_path is None:
        _fail("--out is required")
    if targets is None:
        if fmt not in ds.DEFAULT_TARGETS:
            _fail("--targets is required for generic datasets")
        target_counts = ds.DEFAULT_TARGETS[fmt]
    else:
        target_counts = _parse_targets(targets)

    try:
        loaded = ds.load_dataset(dataset, fmt)
        chosen = ds.sample_stratified(loaded.instances, target_counts, seed)
    except ds.DatasetError as exc:
        _fail(str(exc))
    ds.write_generic_jsonl(out_path, chosen)

    dist = ds.class_distribution(chosen)
    click.echo(f"loaded {len(loaded.instances)} instances ({loaded.skip_count} lines skipped)")
    click.echo(
        f"sampled entailment/contradiction/neutral = "
        f"{dist.entailment}/{dist.contradiction}/{dist.neutral} (total {dist.total})"
    )
    click.echo(f"wrote {Path(out_path)}")


@cli.command()
@click.option("--dataset", type=click.Path(path_type=Path), default=None,
              help="Sampled instances (generic-jsonl).")
@click.option("--out", "run_dir", type=click.Path(path_type=Path), default=None,
              help="Run directory (ledger, cache, manifest).")
@click.option("--phase", type=click.Choice(["generate", "infer", "judge", "all"]), default=None)
@click.option("--runs", type=int, default=None, help="Samples per prompt (default 5).")
@click.option("--seed", type=int, default=None, help="Recorded in the manifest.")
@click.option("--backend", type=click.Choice(["stub", "http"]), default=None)
@click.option("--stub-script", type=click.Path(path_type=Path), default=None,
              help="Scripted responses for the stub backend (JSON).")
@click.option("--prompts", "prompts_dir", type=click.Path(path_type=Path), default=None,
              help="Template directory (defaults to the packaged prompts).")
@click.option("--gen-model", default=None, help="Generator model name.")
@click.option("--gen-endpoint", default=None)
@click.option("--gen-backend-id", default=None)
@click.option("--judge-model", default=None, help="Judge model name.")
@click.option("--judge-endpoint", default=None)
@click.option("--judge-backend-id", default=None)
@click.option("--temperature", type=float, default=None, help="Shared sampling temperature.")
@click.option("--max-tokens", type=int, default=None)
@click.option("--timeout", type=float, default=None)
@click.option("--workers", type=int, default=None, help="Concurrent instances (default 1).")
@click.option("--max-attempts", type=int, default=None, help="Retry cap per request.")
@click.option("--in-flight", type=int, default=None, help="Concurrent requests per backend.")
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
def run(dataset, run_dir, phase, runs, seed, backend, stub_script, prompts_dir,
        gen_model, gen_endpoint, gen_backend_id, judge_model, judge_endpoint,
        judge_backend_id, temperature, max_tokens, timeout, workers,
        max_attempts, in_flight, config_path):
    """Execute experiment phases against a backend, resuming from the ledger."""
    config = _load_config(config_path)
    dataset = _pick(dataset, config, "dataset", None)
    run_dir = _pick(run_dir, config, "out", None)
    phase = _pick(phase, config, "phase", "all")
    runs = int(_pick(runs, config, "runs", 5))
    seed = int(_pick(seed, config, "seed", 17))
    backend_kind = _pick(backend, config, "backend", "stub")
    stub_script = _pick(stub_script, config, "stub_script", None)
    prompts_dir = _pick(prompts_dir, config, "prompts", None)
    workers = int(_pick(workers, config, "workers", 1))
    max_attempts = int(_pick(max_attempts, config, "max_attempts", 4))
    in_flight = int(_pick(in_flight, config, "in_flight", 4))

    if dataset is None:
        _fail("--dataset is required")
    if run_dir is None:
        _fail("--out is required")
    if runs < 1:
        _fail("--runs must be >= 1")

    try:
        library = (PromptLibrary.from_dir(prompts_dir) if prompts_dir
                   else PromptLibrary.default())
    except TemplateError as exc:
        _fail(str(exc))

    gen_cfg = _model_config("gen", config, model=gen_model, endpoint=gen_endpoint,
                            backend_id=gen_backend_id, temperature=temperature,
                            max_tokens=max_tokens, timeout=timeout)
    judge_cfg = _model_config("judge", config, model=judge_model, endpoint=judge_endpoint,
                              backend_id=judge_backend_id, temperature=temperature,
                              max_tokens=max_tokens, timeout=timeout)

    if backend_kind == "stub":
        if stub_script is None:
            _fail("--stub-script is required with --backend stub")
        try:
            backend_impl = StubBackend.from_script_file(stub_script)
        except (OSError, ValueError) as exc:
            _fail(f"cannot load stub script: {exc}")
    else:
        backend_impl = HttpBackend()

    try:
        instances = ds.read_instances(dataset)
    except ds.DatasetError as exc:
        _fail(str(exc))

    manifest = {
        "schema_version": 1,
        "runs": runs,
        "seed": seed,
        "dataset": {"path": str(dataset), "instances": len(instances)},
        "gen_model": gen_cfg.to_json(),
        "judge_model": judge_cfg.to_json(),
        "templates": library.digests(),
    }

    try:
        ledger = RunLedger.open_or_create(run_dir, instances, manifest)
    except (LedgerError, ds.DatasetError) as exc:
        _fail(str(exc))

    gateway = LlmGateway(
        backend_impl,
        cache_dir=ledger.cache_dir,
        max_attempts=max_attempts,
        max_in_flight=in_flight,
        backoff_base=0.0 if backend_kind == "stub" else 0.5,
    )
    orchestrator = Orchestrator(
        ledger, library,
        gen_gateway=gateway, gen_model=gen_cfg,
        judge_gateway=gateway, judge_model=judge_cfg,
        max_workers=workers,
    )

    try:
        if phase in ("generate", "all"):
            orchestrator.run_generation()
        if phase in ("infer", "all"):
            orchestrator.run_inference()
        if phase in ("judge", "all"):
            orchestrator.run_judging()
    except PhaseOrderError as exc:
        _fail(str(exc))
    except LedgerError as exc:
        _fail(str(exc))
    except Exception as exc:  # configuration/script errors surfaced by the gateway
        _fail(f"{type(exc).__name__}: {exc}")

    status = ledger.status()
    click.echo(f"{'phase':<16}{'completed':>10}{'excluded':>10}{'pending':>9}{'total':>7}")
    for row in status.rows:
        click.echo(
            f"{row.name:<16}{row.completed:>10}{row.excluded:>10}{row.pending:>9}{row.total:>7}"
        )
    click.echo(
        f"summary: {status.total_pending} pending, {status.total_excluded} excluded "
        f"(backend calls this invocation: {gateway.backend_calls})"
    )
    if status.total_excluded:
        sys.exit(EXIT_EXCLUSIONS)
    sys.exit(EXIT_OK)


@cli.command()
@click.option("--run", "run_dir", type=click.Path(path_type=Path), default=None,
              help="Run directory to report on.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="Report directory (default <run>/reports).")
@click.option("--emit", default=None, help="Comma-separated formats: md,csv,json.")
@click.option("--help-threshold", type=int, default=None, help="Helpfulness cutoff (default 6).")
@click.option("--cons-threshold", type=int, default=None, help="Similarity cutoff (default 8).")
@click.option("--std", "std_mode", type=click.Choice(["sample", "population"]), default=None)
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
def report(run_dir, out_dir, emit, help_threshold, cons_threshold, std_mode, config_path):
    """Emit the metric tables for a completed (or partial) run."""
    config = _load_config(config_path)
    run_dir = _pick(run_dir, config, "run", None)
    out_dir = _pick(out_dir, config, "report_out", None)
    emit = _pick(emit, config, "emit", "md,csv,json")
    help_threshold = int(_pick(help_threshold, config, "help_threshold", 6))
    cons_threshold = int(_pick(cons_threshold, config, "cons_threshold", 8))
    std_mode = _pick(std_mode, config, "std", "sample")

    if run_dir is None:
        _fail("--run is required")
    if not 1 <= help_threshold <= 10 or not 1 <= cons_threshold <= 10:
        _fail("thresholds must be in 1..10")
    if isinstance(emit, str):
        formats = [f.strip() for f in emit.split(",") if f.strip()]
    else:
        formats = list(emit)
    if not formats:
        _fail("--emit needs at least one format")
    unknown = set(formats) - set(REPORT_FORMATS)
    if unknown:
        _fail(f"unknown formats: {', '.join(sorted(unknown))}")

    try:
        ledger = RunLedger.open_or_create(run_dir)
    except (LedgerError, ds.DatasetError) as exc:
        _fail(str(exc))

    doc = build_report(ledger, help_threshold=help_threshold,
                       cons_threshold=cons_threshold, std_mode=std_mode)
    for warning in doc["warnings"]:
        click.echo(f"warning: {warning}", err=True)

    out_dir = Path(out_dir) if out_dir else Path(run_dir) / "reports"
    written = write_report(doc, out_dir, formats)
    for path in written:
        click.echo(f"wrote {path}")
    sys.exit(EXIT_OK)


def main():
    cli()


if __name__ == "__main__":
    main()
