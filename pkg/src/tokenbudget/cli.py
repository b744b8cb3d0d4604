"""Command-line entry point.

Every command builds the same request models the HTTP service accepts and
dispatches them either to a running server (``--server``) or in-process
through the identical handler functions. Option precedence is CLI flag over
config-file value over built-in default, and each run writes the resolved
configuration beside its outputs.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Callable, Mapping

import click
import httpx
from pydantic import BaseModel, ValidationError

from .core import parse_schedule_arg
from .curriculum import DEFAULT_STAGES
from .errors import InvalidParameterError, TokenBudgetError
from .harness import EvalReport, EvalRow, emit_report
from .service import handlers, schemas

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib


class ServiceClient:
    """Thin client: remote POSTs when a server URL is set, else in-process."""

    def __init__(self, server: str | None = None) -> None:
        self.server = server

    def call(self, path: str, payload: BaseModel | None = None) -> dict:
        if self.server is None:
            handler, model = handlers.ROUTES[path]
            if model is not None and not isinstance(payload, model):
                raise InvalidParameterError(f"{path} expects {model.__name__}")
            result = handler(payload) if model is not None else handler()
            return result.model_dump(mode="json")
        url = self.server.rstrip("/") + path
        if payload is None:
            response = httpx.get(url, timeout=60.0)
        else:
            response = httpx.post(url, json=payload.model_dump(mode="json"), timeout=600.0)
        if response.status_code != 200:
            raise TokenBudgetError(f"server returned HTTP {response.status_code}: {response.text}")
        return response.json()


def _fail(error_type: str, message: str) -> None:
    click.echo(json.dumps({"error": {"type": error_type, "message": message}}), err=True)
    sys.exit(1)


def _guarded(fn: Callable[[], None]) -> None:
    try:
        fn()
    except ValidationError as exc:
        _fail("ValidationError", str(exc))
    except TokenBudgetError as exc:
        _fail(type(exc).__name__, str(exc))
    except FileNotFoundError as exc:
        _fail("FileNotFoundError", str(exc))
    except httpx.HTTPError as exc:
        _fail("HTTPError", str(exc))


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    raw = Path(path).read_bytes()
    if path.endswith(".toml"):
        return tomllib.loads(raw.decode("utf-8"))
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return tomllib.loads(raw.decode("utf-8"))


def _resolve(command: str, config: Mapping, flags: Mapping[str, Any], defaults: Mapping[str, Any]) -> dict:
    """Merge flag > config-file > default, rejecting unknown config keys."""
    section = config.get(command, {})
    if not isinstance(section, Mapping):
        raise InvalidParameterError(f"config section {command!r} must be a table")
    unknown = sorted(set(section) - set(defaults))
    if unknown:
        raise InvalidParameterError(f"unknown config keys in [{command}]: {unknown}")
    resolved = {}
    for key, default in defaults.items():
        flag = flags.get(key)
        if flag is not None:
            resolved[key] = flag
        elif key in section:
            resolved[key] = section[key]
        else:
            resolved[key] = default
    return resolved


def _write_snapshot(primary_output: Path, command: str, resolved: Mapping[str, Any]) -> Path:
    """Persist the resolved configuration beside the command's outputs."""
    if primary_output.suffix:
        snapshot = primary_output.with_name(primary_output.name + ".config.json")
        snapshot.parent.mkdir(parents=True, exist_ok=True)
    else:
        primary_output.mkdir(parents=True, exist_ok=True)
        snapshot = primary_output / "resolved_config.json"
    with open(snapshot, "w", encoding="utf-8") as handle:
        json.dump({"command": command, "resolved": dict(resolved)}, handle, sort_keys=True, indent=2)
        handle.write("\n")
    return snapshot


def _read_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _write_jsonl(records: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def _load_gold(path: str | None) -> dict[str, str] | None:
    if path is None:
        return None
    gold = {}
    for record in _read_jsonl(path):
        gold[str(record["id"])] = str(record["answer"])
    return gold


def parse_budget_list(text: str) -> list[int]:
    """Parse ``500,1000,2000`` or ``500..10000`` / ``500..10000:250`` ranges."""
    text = text.strip()
    if ".." in text:
        span, _, step_text = text.partition(":")
        start_text, _, stop_text = span.partition("..")
        try:
            start, stop = int(start_text), int(stop_text)
            step = int(step_text) if step_text else 500
        except ValueError:
            raise InvalidParameterError(f"bad budget range {text!r}") from None
        if step < 1 or stop < start:
            raise InvalidParameterError(f"bad budget range {text!r}")
        return list(range(start, stop + 1, step))
    try:
        budgets = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise InvalidParameterError(f"bad budget list {text!r}") from None
    if not budgets:
        raise InvalidParameterError("budget list is empty")
    return budgets


def _parse_caps(text: str | None) -> dict[str, int] | None:
    if text is None:
        return None
    caps = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, value = part.partition("=")
        if not sep:
            raise InvalidParameterError(f"caps must look like source=count, got {part!r}")
        caps[name.strip()] = int(value)
    return caps


@click.group()
@click.option("--server", default=None, help="Base URL of a running service; default runs in-process.")
@click.option("--config", "config_path", default=None, type=click.Path(), help="TOML or JSON config file.")
@click.pass_context
def main(ctx: click.Context, server: str | None, config_path: str | None) -> None:
    """Budget-aware chain-of-thought decoding toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["client"] = ServiceClient(server)
    ctx.obj["config_path"] = config_path


def _context(ctx: click.Context) -> tuple[ServiceClient, dict]:
    return ctx.obj["client"], _load_config(ctx.obj["config_path"])


_CURATE_DEFAULTS = {
    "granularity": 50,
    "k": 8,
    "include_origin": True,
    "max_len": 10000,
    "caps": None,
    "bucket_width": 500,
    "seed": 0,
}


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--granularity", type=int, default=None)
@click.option("--k", type=int, default=None)
@click.option("--include-origin/--no-include-origin", default=None)
@click.option("--max-len", type=int, default=None)
@click.option("--caps", type=str, default=None, help="Per-source caps, e.g. s1k=1000,limo=800.")
@click.option("--bucket-width", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def curate(ctx: click.Context, input_path: str, out_path: str, **flags: Any) -> None:
    """Curate raw (prompt, answer) JSONL into budget-annotated SFT records."""

    def run() -> None:
        client, config = _context(ctx)
        opts = _resolve("curate", config, flags, _CURATE_DEFAULTS)
        caps = _parse_caps(opts["caps"]) if isinstance(opts["caps"], str) else opts["caps"]
        records = [
            schemas.RawSampleModel(
                prompt=r.get("prompt", ""),
                answer=r["answer"],
                source=r.get("source", "unknown"),
                category=r.get("category"),
            )
            for r in _read_jsonl(input_path)
        ]
        request = schemas.CurateRequest(
            records=records,
            granularity=opts["granularity"],
            k=opts["k"],
            include_origin=opts["include_origin"],
            max_length=opts["max_len"],
            caps=caps,
            bucket_width=opts["bucket_width"],
            seed=opts["seed"],
        )
        result = client.call("/v1/curate", request)
        out = Path(out_path)
        _write_jsonl(result["records"], out)
        _write_snapshot(out, "curate", {**opts, "caps": caps, "input": input_path, "out": out_path})
        report = {
            "records": len(result["records"]),
            "dropped": result["dropped"],
            "histogram": result["histogram"],
            "shortfalls": result["shortfalls"],
            "out": str(out),
        }
        report_path = out.with_name(out.name + ".report.json")
        report_path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        click.echo(json.dumps(report, sort_keys=True))

    _guarded(run)


_GENERATE_DEFAULTS = {
    "budget": None,
    "schedule": "ratio:8",
    "include_origin": True,
    "answer_window": 50,
    "temperature": 0.0,
    "top_p": 1.0,
    "seed": 0,
    "n_samples": 1,
    "backend": "scripted",
    "think_tokens": -1,
    "answer_tokens": 5,
    "answer_text": None,
    "target_fraction": 0.9,
    "endpoint": None,
    "model": "default",
    "timeout": 30.0,
    "retries": 2,
    "auth_env": "TOKENBUDGET_API_TOKEN",
}


def _backend_model(opts: Mapping[str, Any]) -> schemas.BackendModel:
    kind = opts["backend"]
    if kind == "scripted":
        think = opts["think_tokens"]
        answer = opts["answer_tokens"]
        return schemas.ScriptedBackendModel(
            think_tokens=None if think is None or think < 0 else think,
            answer_tokens=None if answer is None or answer < 0 else answer,
            answer_text=opts["answer_text"],
        )
    if kind == "policy":
        return schemas.PolicyBackendModel(
            target_fraction=opts["target_fraction"],
            answer_tokens=max(opts["answer_tokens"], 0),
        )
    if kind == "http":
        if not opts["endpoint"]:
            raise InvalidParameterError("http backend requires --endpoint")
        return schemas.HttpBackendModel(
            base_url=opts["endpoint"],
            model=opts["model"],
            auth_env=opts["auth_env"],
            timeout_s=opts["timeout"],
            max_retries=opts["retries"],
        )
    raise InvalidParameterError(f"backend must be scripted, policy, or http, got {kind!r}")


@main.command()
@click.option("--problems", "problems_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--budget", type=int, default=None)
@click.option("--schedule", type=str, default=None, help="ratio:K, fixed:I, or none.")
@click.option("--include-origin/--no-include-origin", default=None)
@click.option("--answer-window", type=int, default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--top-p", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--n-samples", type=int, default=None)
@click.option("--backend", type=click.Choice(["scripted", "policy", "http"]), default=None)
@click.option("--think-tokens", type=int, default=None, help="Scripted stop point; -1 never stops.")
@click.option("--answer-tokens", type=int, default=None, help="Scripted answer length; -1 never stops.")
@click.option("--answer-text", type=str, default=None)
@click.option("--target-fraction", type=float, default=None)
@click.option("--endpoint", type=str, default=None)
@click.option("--model", type=str, default=None)
@click.option("--timeout", type=float, default=None)
@click.option("--retries", type=int, default=None)
@click.option("--auth-env", type=str, default=None)
@click.pass_context
def generate(ctx: click.Context, problems_path: str, out_path: str, **flags: Any) -> None:
    """Run budgeted generation sessions over a problems file."""

    def run() -> None:
        client, config = _context(ctx)
        opts = _resolve("generate", config, flags, _GENERATE_DEFAULTS)
        if opts["budget"] is None:
            raise InvalidParameterError("--budget is required")
        parse_schedule_arg(opts["schedule"])  # fail fast on bad selectors
        problems = [
            schemas.ProblemModel(id=r.get("id"), prompt=r["prompt"])
            for r in _read_jsonl(problems_path)
        ]
        request = schemas.GenerateRequest(
            problems=problems,
            budget=opts["budget"],
            schedule=opts["schedule"],
            include_origin=opts["include_origin"],
            answer_window=opts["answer_window"],
            temperature=opts["temperature"],
            top_p=opts["top_p"],
            seed=opts["seed"],
            n_samples=opts["n_samples"],
            backend=_backend_model(opts),
        )
        result = client.call("/v1/generate", request)
        out = Path(out_path)
        _write_jsonl(result["traces"], out)
        _write_snapshot(out, "generate", {**opts, "problems": problems_path, "out": out_path})
        terminations: dict[str, int] = {}
        for trace in result["traces"]:
            terminations[trace["termination"]] = terminations.get(trace["termination"], 0) + 1
        click.echo(
            json.dumps(
                {"traces": len(result["traces"]), "terminations": terminations, "out": str(out)},
                sort_keys=True,
            )
        )

    _guarded(run)


_EVAL_DEFAULTS = {"budgets": None, "formats": ("jsonl", "csv", "plot-data"), "seed": 0}


@main.command("eval")
@click.option("--traces", "traces_path", required=True, type=click.Path(exists=True))
@click.option("--gold", "gold_path", default=None, type=click.Path(exists=True))
@click.option("--budgets", type=str, default=None, help="Comma list or start..stop[:step].")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option(
    "--format",
    "formats",
    multiple=True,
    type=click.Choice(["jsonl", "csv", "plot-data"]),
    help="Report formats; default all three.",
)
@click.pass_context
def eval_command(
    ctx: click.Context,
    traces_path: str,
    gold_path: str | None,
    budgets: str | None,
    out_dir: str,
    formats: tuple[str, ...],
) -> None:
    """Compute budget-adherence and accuracy metrics over stored traces."""

    def run() -> None:
        client, config = _context(ctx)
        opts = _resolve(
            "eval",
            config,
            {"budgets": budgets, "formats": formats or None},
            {"budgets": None, "formats": ["jsonl", "csv", "plot-data"]},
        )
        budget_list = (
            parse_budget_list(opts["budgets"]) if isinstance(opts["budgets"], str) else opts["budgets"]
        )
        traces = [schemas.TraceModel(**r) for r in _read_jsonl(traces_path)]
        request = schemas.EvalRequest(traces=traces, gold=_load_gold(gold_path), budgets=budget_list)
        result = client.call("/v1/eval", request)
        out = Path(out_dir)
        report = EvalReport(
            rows=tuple(EvalRow(**row) for row in result["rows"]),
            schema_version=result["schema_version"],
        )
        written = []
        for fmt in opts["formats"]:
            written.extend(str(p) for p in emit_report(report, fmt, out))
        _write_snapshot(out, "eval", {**opts, "traces": traces_path, "gold": gold_path, "out": out_dir})
        click.echo(json.dumps({"rows": result["rows"], "written": written}, sort_keys=True))

    _guarded(run)


_REWARD_DEFAULTS = {"k1": 0.7, "k2": 0.15, "k3": 0.15, "r": 16.0}


@main.command()
@click.option("--traces", "traces_path", required=True, type=click.Path(exists=True))
@click.option("--gold", "gold_path", default=None, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--k1", type=float, default=None)
@click.option("--k2", type=float, default=None)
@click.option("--k3", type=float, default=None)
@click.option("--r", type=float, default=None)
@click.pass_context
def reward(
    ctx: click.Context,
    traces_path: str,
    gold_path: str | None,
    out_path: str,
    **flags: Any,
) -> None:
    """Score stored traces with the composite reward."""

    def run() -> None:
        client, config = _context(ctx)
        opts = _resolve("reward", config, flags, _REWARD_DEFAULTS)
        gold = _load_gold(gold_path) or {}
        trace_records = _read_jsonl(traces_path)
        items = [
            schemas.RewardItemModel(
                think_length=r["think_length"],
                budget=r["budget"],
                generated_answer=r.get("answer_text"),
                gold=gold.get(str(r.get("problem_id", ""))),
                format_ok=int(bool(r.get("think_closed", True) and r.get("answer_text"))),
            )
            for r in trace_records
        ]
        request = schemas.RewardScoreRequest(
            items=items, k1=opts["k1"], k2=opts["k2"], k3=opts["k3"], r=opts["r"]
        )
        result = client.call("/v1/reward/score", request)
        out = Path(out_path)
        rows = [
            {**breakdown, "problem_id": record.get("problem_id"), "sample_index": record.get("sample_index")}
            for breakdown, record in zip(result["breakdowns"], trace_records)
        ]
        _write_jsonl(rows, out)
        _write_snapshot(out, "reward", {**opts, "traces": traces_path, "gold": gold_path, "out": out_path})
        click.echo(json.dumps({"summary": result["summary"], "out": str(out)}, sort_keys=True))

    _guarded(run)


@main.group()
def schedule() -> None:
    """Schedule inspection commands."""


_PREVIEW_DEFAULTS = {
    "stages": ",".join(str(b) for b in DEFAULT_STAGES),
    "mixed": True,
    "batches_per_stage": 1,
    "seed": 0,
    "n": 20,
    "budget": None,
    "schedule": "ratio:8",
    "include_origin": True,
    "max_budget": None,
}


@schedule.command("preview")
@click.option("--plan", "plan_path", default=None, type=click.Path(exists=True), help="Curriculum plan JSON file.")
@click.option("--stages", type=str, default=None)
@click.option("--mixed/--no-mixed", default=None)
@click.option("--batches-per-stage", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--n", type=int, default=None)
@click.option("--budget", type=int, default=None, help="Preview a control-token schedule instead.")
@click.option("--schedule", "schedule_arg", type=str, default=None)
@click.option("--include-origin/--no-include-origin", default=None)
@click.option("--max-budget", type=int, default=None)
@click.option("--out", "out_path", default=None, type=click.Path())
@click.pass_context
def schedule_preview(ctx: click.Context, plan_path: str | None, out_path: str | None, **flags: Any) -> None:
    """Preview curriculum budget draws, or marker positions with --budget."""

    def run() -> None:
        client, config = _context(ctx)
        flags["schedule"] = flags.pop("schedule_arg", None)
        opts = _resolve("schedule_preview", config, flags, _PREVIEW_DEFAULTS)
        if opts["budget"] is not None:
            request = schemas.SchedulePreviewRequest(
                budget=opts["budget"],
                schedule=opts["schedule"],
                include_origin=opts["include_origin"],
                max_budget=opts["max_budget"],
            )
            result = client.call("/v1/schedule/preview", request)
        else:
            if plan_path is not None:
                plan = json.loads(Path(plan_path).read_text(encoding="utf-8"))
                stages = plan.get("stages", list(DEFAULT_STAGES))
                mixed = plan.get("mixed", True)
                batches = plan.get("batches_per_stage", 1)
                seed = plan.get("seed", 0)
            else:
                stages = [int(s) for s in str(opts["stages"]).split(",") if s.strip()]
                mixed, batches, seed = opts["mixed"], opts["batches_per_stage"], opts["seed"]
            request = schemas.CurriculumPreviewRequest(
                stages=stages, mixed=mixed, batches_per_stage=batches, seed=seed, n=opts["n"]
            )
            result = client.call("/v1/curriculum/preview", request)
        if out_path is not None:
            out = Path(out_path)
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(json.dumps(result, sort_keys=True, indent=2) + "\n", encoding="utf-8")
            _write_snapshot(out, "schedule_preview", {**opts, "plan": plan_path, "out": out_path})
        click.echo(json.dumps(result, sort_keys=True))

    _guarded(run)


_SIMULATE_DEFAULTS = {
    "budgets": "500..10000:500",
    "policy": 0.9,
    "k": 8,
    "include_origin": True,
    "answer_window": 50,
    "n_problems": 4,
    "n_samples": 1,
    "seed": 0,
}


@main.command()
@click.option("--budgets", type=str, default=None, help="Comma list or start..stop[:step].")
@click.option("--policy", type=float, default=None, help="Target fraction of the budget to use.")
@click.option("--k", type=int, default=None)
@click.option("--include-origin/--no-include-origin", default=None)
@click.option("--answer-window", type=int, default=None)
@click.option("--n-problems", type=int, default=None)
@click.option("--n-samples", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def simulate(ctx: click.Context, out_dir: str, **flags: Any) -> None:
    """Sweep the synthetic budget-following policy and report adherence."""

    def run() -> None:
        client, config = _context(ctx)
        opts = _resolve("simulate", config, flags, _SIMULATE_DEFAULTS)
        budgets = (
            parse_budget_list(opts["budgets"]) if isinstance(opts["budgets"], str) else list(opts["budgets"])
        )
        request = schemas.SimulateRequest(
            budgets=budgets,
            target_fraction=opts["policy"],
            k=opts["k"],
            include_origin=opts["include_origin"],
            answer_window=opts["answer_window"],
            n_problems=opts["n_problems"],
            n_samples=opts["n_samples"],
            seed=opts["seed"],
        )
        result = client.call("/v1/simulate", request)
        out = Path(out_dir)
        report = EvalReport(
            rows=tuple(EvalRow(**row) for row in result["rows"]),
            schema_version=result["schema_version"],
        )
        written = []
        for fmt in ("jsonl", "csv", "plot-data"):
            written.extend(str(p) for p in emit_report(report, fmt, out))
        _write_snapshot(out, "simulate", {**opts, "budgets": budgets, "out": out_dir})
        click.echo(
            json.dumps(
                {"rows": result["rows"], "n_traces": result["n_traces"], "written": written},
                sort_keys=True,
            )
        )

    _guarded(run)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
