"""Endpoint driver, scoring, and length-bucketed aggregation.

Sends each generated case to an OpenAI-compatible chat-completion endpoint
with bounded concurrency, retries with exponential backoff, and resumable
output; scores responses by needle recall; and aggregates a length x depth
accuracy grid plus bucketed averages computed in exact rational arithmetic.
"""

from __future__ import annotations

import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import requests

from .errors import ConfigurationError, EndpointError, FormatError, IntegrityError
from .evalgen import EvalCase, read_cases

DEFAULT_BUCKET_THRESHOLDS = (131072, 524288, 1048576)  # 128K / 512K / 1M, binary units


@dataclass
class EndpointConfig:
    base_url: str
    model_id: str
    auth_env_var: str | None = None
    max_output_tokens: int = 64
    temperature: float = 0.0
    request_timeout: float = 120.0
    max_concurrency: int = 4
    retries: int = 2
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ConfigurationError("max_concurrency must be >= 1")
        if self.request_timeout <= 0:
            raise ConfigurationError("request_timeout must be positive")
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")

    def auth_token(self) -> str | None:
        if not self.auth_env_var:
            return None
        token = os.environ.get(self.auth_env_var)
        if token is None:
            raise ConfigurationError(
                f"auth environment variable {self.auth_env_var} is not set"
            )
        return token


@dataclass
class ResponseRecord:
    case_id: str
    response_text: str = ""
    latency_ms: float | None = None
    status: str = "ok"  # "ok" or "error"
    error_kind: str | None = None

    def to_json_line(self) -> str:
        doc = {
            "case_id": self.case_id,
            "response_text": self.response_text,
            "latency_ms": self.latency_ms,
            "status": self.status,
        }
        if self.status == "error":
            doc["error_kind"] = self.error_kind
        return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


def read_responses(path) -> dict[str, ResponseRecord]:
    records: dict[str, ResponseRecord] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                rec = ResponseRecord(
                    case_id=doc["case_id"],
                    response_text=doc.get("response_text", ""),
                    latency_ms=doc.get("latency_ms"),
                    status=doc.get("status", "ok"),
                    error_kind=doc.get("error_kind"),
                )
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}: bad response at line {lineno}: {exc}") from exc
            records[rec.case_id] = rec
    return records


def _request_once(session, config: EndpointConfig, prompt: str) -> str:
    headers = {"Content-Type": "application/json"}
    token = config.auth_token()
    if token:
        headers["Authorization"] = f"Bearer {token}"
    body = {
        "model": config.model_id,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
        "max_tokens": config.max_output_tokens,
    }
    resp = session.post(
        config.base_url.rstrip("/") + "/chat/completions",
        headers=headers, json=body, timeout=config.request_timeout,
    )
    if resp.status_code != 200:
        raise EndpointError(f"http_status:{resp.status_code}")
    doc = resp.json()
    try:
        return doc["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise EndpointError("bad_response_schema") from exc


def run_case(session, config: EndpointConfig, case: EvalCase) -> ResponseRecord:
    """One case with retries; failures become error records, never raises."""
    start = time.monotonic()
    last_kind = "unknown"
    for attempt in range(config.retries + 1):
        try:
            text = _request_once(session, config, case.prompt)
            latency = (time.monotonic() - start) * 1000.0
            return ResponseRecord(case.case_id, text, latency_ms=latency)
        except EndpointError as exc:
            last_kind = str(exc)
        except requests.RequestException as exc:
            last_kind = f"transport:{type(exc).__name__}"
        if attempt < config.retries:
            time.sleep(config.backoff_base * 2**attempt)
    return ResponseRecord(case.case_id, "", status="error", error_kind=last_kind)


def run(case_file, config: EndpointConfig, out_path, resume: bool = False) -> dict:
    """Drive every case through the endpoint with bounded concurrency.

    Responses are appended by a single writer thread lock as they finish,
    then the file is rewritten canonically ordered by case id. With resume,
    case ids already present in out_path are skipped. Returns summary
    counts; raises EndpointError if every attempted case failed.
    """
    config.auth_token()  # fail fast on missing auth before any requests
    cases = list(read_cases(case_file))
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise IntegrityError("duplicate case ids in case file")

    done: dict[str, ResponseRecord] = {}
    if resume and os.path.exists(out_path):
        done = read_responses(out_path)
    todo = [c for c in cases if c.case_id not in done]

    lock = threading.Lock()
    session = requests.Session()
    new_records: dict[str, ResponseRecord] = {}

    def work(case):
        rec = run_case(session, config, case)
        with lock:
            new_records[case.case_id] = rec

    if todo:
        with ThreadPoolExecutor(max_workers=config.max_concurrency) as pool:
            list(pool.map(work, todo))

    merged = {**done, **new_records}
    by_case_order = sorted(merged.values(), key=lambda r: r.case_id)
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in by_case_order:
            fh.write(rec.to_json_line() + "\n")

    errors = sum(1 for r in merged.values() if r.status == "error")
    summary = {
        "cases": len(cases),
        "requested": len(todo),
        "skipped": len(done),
        "errors": errors,
    }
    if todo and errors == len(todo):
        raise EndpointError(f"all {errors} requests failed (last records in {out_path})")
    return summary


def normalize(text: str) -> str:
    return " ".join(text.split())


def score_case(case: EvalCase, response: ResponseRecord) -> Fraction:
    """Needle recall in [0,1]: fraction of gold values present verbatim in
    the whitespace-normalized response. Error responses score 0."""
    if case.case_id != response.case_id:
        raise IntegrityError(
            f"case/response id mismatch: {case.case_id} vs {response.case_id}"
        )
    if response.status != "ok" or not case.gold:
        return Fraction(0)
    text = normalize(response.response_text)
    found = sum(1 for g in case.gold if g in text)
    return Fraction(found, len(case.gold))


@dataclass
class ScoreReport:
    per_case: list  # [{case_id, target_length, depth, score}]
    grid: dict  # (length, depth) -> Fraction mean
    bucket_averages: dict  # threshold -> Fraction mean, absent if empty
    overall: Fraction
    thresholds: tuple

    def as_dict(self) -> dict:
        return {
            "per_case": [
                {**rec, "score": float(rec["score"])} for rec in self.per_case
            ],
            "grid": {
                f"{length}:{depth:.6f}": float(v) for (length, depth), v in sorted(self.grid.items())
            },
            "buckets": {str(t): float(v) for t, v in sorted(self.bucket_averages.items())},
            "overall": float(self.overall),
        }


def score_all(cases, responses: dict[str, ResponseRecord]) -> list[dict]:
    """Per-case score records; every case must have exactly one response."""
    out = []
    for case in cases:
        rec = responses.get(case.case_id)
        if rec is None:
            raise IntegrityError(f"no response for case {case.case_id}")
        out.append(
            {
                "case_id": case.case_id,
                "target_length": case.target_length,
                "depth": float(case.depth_fractions[0]),
                "score": score_case(case, rec),
            }
        )
    return out


def aggregate(per_case: list[dict], thresholds=DEFAULT_BUCKET_THRESHOLDS) -> ScoreReport:
    """Grid means and bucketed averages over per-case scores.

    Bucket for threshold T averages cases with target_length <= T; empty
    buckets are omitted rather than reported as zero. All means are exact
    rationals.
    """
    thresholds = tuple(sorted(thresholds))
    if not per_case:
        raise ConfigurationError("no scores to aggregate")
    cells: dict[tuple, list[Fraction]] = {}
    for rec in per_case:
        cells.setdefault((rec["target_length"], rec["depth"]), []).append(rec["score"])
    grid = {k: sum(v, Fraction(0)) / len(v) for k, v in cells.items()}
    buckets = {}
    for t in thresholds:
        scores = [r["score"] for r in per_case if r["target_length"] <= t]
        if scores:
            buckets[t] = sum(scores, Fraction(0)) / len(scores)
    overall = sum((r["score"] for r in per_case), Fraction(0)) / len(per_case)
    return ScoreReport(
        per_case=per_case, grid=grid, bucket_averages=buckets,
        overall=overall, thresholds=thresholds,
    )


def heatmap_export(report: ScoreReport, path) -> None:
    """Tab-separated accuracy matrix: rows = depths ascending, columns =
    lengths ascending, 4 decimal places, with header row and column."""
    if not report.grid:
        raise ConfigurationError("report has no grid to export")
    lengths = sorted({length for length, _ in report.grid})
    depths = sorted({depth for _, depth in report.grid})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("depth\\length\t" + "\t".join(str(x) for x in lengths) + "\n")
        for d in depths:
            row = [f"{d:.4f}"]
            for length in lengths:
                v = report.grid.get((length, d))
                row.append("" if v is None else f"{float(v):.4f}")
            fh.write("\t".join(row) + "\n")
