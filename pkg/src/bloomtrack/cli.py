"""Command-line client for the task handlers.

Runs tasks in-process by default, or against a running service when
--server is given; both paths go through the same request/response models,
so a config file behaves identically either way.

Exit codes: 0 success, 2 config or validation problem, 3 runtime failure
(an aborted mission, a failed fit, a server-side fault).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import httpx
from pydantic import ValidationError as SchemaError

from .errors import BloomtrackError, ValidationError
from .mission import read_mission_csv
from .service.handlers import (
    handle_fit,
    handle_gen_field,
    handle_simulate,
    handle_sweep,
    handle_validate,
)
from .service.schemas import (
    FitRequest,
    FitResponse,
    GenFieldRequest,
    GenFieldResponse,
    MissionRequest,
    MissionResponse,
    SweepRequest,
    SweepResponse,
    TASK_MODELS,
    ValidateRequest,
    ValidateResponse,
)
from .sweep import DirectoryCellStore

TASKS = ("simulate", "sweep", "fit", "gen-field", "validate")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _parse_args(argv):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config file for the task")
    common.add_argument("--out-dir", default="runs", help="where run directories are created")
    common.add_argument("--seed", type=int, default=None, help="override the config's seeds")
    common.add_argument("--threads", type=int, default=None, help="worker threads (sweep)")
    common.add_argument(
        "--resume", action="store_true", help="reuse the newest run directory for this config"
    )
    common.add_argument(
        "--dry-run", action="store_true", help="validate and show the run plan, run nothing"
    )
    common.add_argument("--server", default=None, help="service URL; default runs in-process")

    parser = argparse.ArgumentParser(prog="bloomtrack", description=__doc__)
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        sub.add_parser(task, parents=[common], help=f"run the {task} task")
    return parser.parse_args(argv)


def _load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as err:
        raise CliError(2, f"cannot read config: {err}")
    except json.JSONDecodeError as err:
        raise CliError(2, f"config is not valid JSON: {err}")


def _apply_overrides(task, doc, args):
    if doc.pop("task", task) != task:
        raise CliError(2, f"config is for a different task than {task!r}")
    if args.seed is not None:
        if task == "simulate":
            doc.setdefault("sensor", {})["seed"] = args.seed
            doc.setdefault("position", {})["seed"] = args.seed + 1
        elif task == "sweep":
            doc["base_seed"] = args.seed
        elif task == "fit":
            doc["seed"] = args.seed
    if args.threads is not None and task == "sweep":
        doc["threads"] = args.threads
    return doc


def _build_request(task, doc):
    try:
        return TASK_MODELS[task].model_validate(doc)
    except SchemaError as err:
        lines = [
            "  " + ".".join(str(p) for p in e["loc"]) + ": " + e["msg"] for e in err.errors()
        ]
        raise CliError(2, "invalid config:\n" + "\n".join(lines))


def _config_digest(doc):
    # threads is an execution detail: the same sweep run at a different
    # parallelism must hash to the same run directory for --resume
    hashable = {k: v for k, v in doc.items() if k != "threads"}
    return hashlib.sha256(
        json.dumps(hashable, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:8]


def _run_dir(args, task, doc):
    prefix = f"{task}-{_config_digest(doc)}-"
    if args.resume and os.path.isdir(args.out_dir):
        existing = sorted(d for d in os.listdir(args.out_dir) if d.startswith(prefix))
        if existing:
            return os.path.join(args.out_dir, existing[-1])
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    return os.path.join(args.out_dir, prefix + stamp)


def _make_client(server):
    return httpx.Client(base_url=server, timeout=3600.0)


def _post(args, path, request, response_model):
    with _make_client(args.server) as client:
        try:
            resp = client.post(path, json=request.model_dump(mode="json"))
        except httpx.HTTPError as err:
            raise CliError(3, f"server request failed: {err}")
    if resp.status_code == 422:
        raise CliError(2, f"server rejected the request: {resp.json()['detail']}")
    if resp.status_code != 200:
        detail = resp.json().get("detail", resp.text) if resp.text else resp.text
        raise CliError(3, f"server error {resp.status_code}: {detail}")
    return response_model.model_validate(resp.json())


def _dispatch(args, path, request, handler, response_model, **handler_kwargs):
    if args.server:
        return _post(args, path, request, response_model)
    try:
        return handler(request, **handler_kwargs)
    except ValidationError as err:
        raise CliError(2, str(err))
    except BloomtrackError as err:
        raise CliError(3, str(err))


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _do_simulate(args, doc):
    request = _build_request("simulate", doc)
    run_dir = _run_dir(args, "simulate", doc)
    if args.dry_run:
        print(f"dry run: config valid, would run in {run_dir}")
        return 0
    response = _dispatch(args, "/simulate", request, handle_simulate, MissionResponse)
    os.makedirs(run_dir, exist_ok=True)
    csv_path = os.path.join(run_dir, "mission.csv")
    with open(csv_path, "w") as fh:
        fh.write(response.csv_log)
    read_mission_csv(csv_path).to_jsonl(os.path.join(run_dir, "mission.jsonl"))
    summary = response.model_dump(exclude={"csv_log"})
    _write_json(os.path.join(run_dir, "metrics.json"), summary)
    print(
        f"end_reason={response.end_reason} ticks={response.n_ticks} "
        f"estimator_failures={response.estimator_failures}"
    )
    if response.metrics is not None:
        fmt = lambda v: "n/a" if v is None else f"{v:.4g}"
        print(
            f"tracking rms={fmt(response.metrics.tracking_error.rms)} "
            f"angle p95={fmt(response.metrics.angle_error.p95)}"
        )
    print(f"artifacts: {run_dir}")
    if response.end_reason == "aborted":
        print("mission aborted", file=sys.stderr)
        return 3
    return 0


def _do_sweep(args, doc):
    request = _build_request("sweep", doc)
    run_dir = _run_dir(args, "sweep", doc)
    if args.dry_run:
        print(f"dry run: config valid, would run in {run_dir}")
        return 0
    os.makedirs(run_dir, exist_ok=True)
    kwargs = {}
    if not args.server:
        kwargs["cell_store"] = DirectoryCellStore(os.path.join(run_dir, "cells"))
    response = _dispatch(args, "/sweep", request, handle_sweep, SweepResponse, **kwargs)
    with open(os.path.join(run_dir, "sweep.csv"), "w") as fh:
        fh.write(response.csv_text)
    _write_json(os.path.join(run_dir, "sweep.json"), response.result)
    n_cells = len(response.result["cells"])
    n_failed = sum(
        1
        for cell in response.result["cells"]
        for o in cell["outcomes"]
        if o["status"] != "ok"
    )
    print(f"sweep finished: {n_cells} cells, {n_failed} failed replicates")
    print(f"artifacts: {run_dir}")
    return 0


def _do_fit(args, doc):
    request = _build_request("fit", doc)
    run_dir = _run_dir(args, "fit", doc)
    if args.dry_run:
        print(f"dry run: config valid, would run in {run_dir}")
        return 0
    response = _dispatch(args, "/fit", request, handle_fit, FitResponse)
    os.makedirs(run_dir, exist_ok=True)
    _write_json(
        os.path.join(run_dir, "hyperparameters.json"),
        response.hyperparameters.model_dump(),
    )
    _write_json(os.path.join(run_dir, "fit.json"), response.model_dump())
    print(response.summary)
    print(f"artifacts: {run_dir}")
    return 0


def _do_gen_field(args, doc):
    request = _build_request("gen-field", doc)
    run_dir = _run_dir(args, "gen-field", doc)
    if args.dry_run:
        print(f"dry run: config valid, would run in {run_dir}")
        return 0
    response = _dispatch(args, "/gen-field", request, handle_gen_field, GenFieldResponse)
    os.makedirs(run_dir, exist_ok=True)
    name = "field.csv" if response.format == "csv-grid" else "field.json"
    out_path = os.path.join(run_dir, name)
    with open(out_path, "w") as fh:
        fh.write(response.text)
    print(f"wrote {response.format} grid {response.shape[0]}x{response.shape[1]}: {out_path}")
    return 0


def _do_validate(args, doc):
    request = ValidateRequest(config=doc)
    response = _dispatch(args, "/validate", request, handle_validate, ValidateResponse)
    if response.valid:
        print(f"config valid for task {response.task!r}")
        return 0
    print("config invalid:", file=sys.stderr)
    for line in response.errors:
        print(f"  {line}", file=sys.stderr)
    return 2


def main(argv=None):
    args = _parse_args(argv)
    try:
        doc = _load_config(args.config)
        if args.task == "validate":
            return _do_validate(args, doc)
        doc = _apply_overrides(args.task, doc, args)
        runner = {
            "simulate": _do_simulate,
            "sweep": _do_sweep,
            "fit": _do_fit,
            "gen-field": _do_gen_field,
        }[args.task]
        return runner(args, doc)
    except CliError as err:
        print(str(err), file=sys.stderr)
        return err.code


if __name__ == "__main__":
    raise SystemExit(main())
