"""``spot`` command-line interface.

Numeric settings come from JSON config files; flags carry paths and oracle
selection.  Every command writes ``<output>.manifest.json`` next to its main
artifact.  Failures print a JSON object ``{"error": kind, "message": ...}``
to stderr and exit with a kind-specific code (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from . import __version__, connect4
from .errors import (
    DatasetFormatError,
    IllegalMoveError,
    InvalidInputError,
    MissingCredentialError,
    NonFiniteError,
    OracleParseError,
    ResourceError,
    SpotError,
    TransportError,
)
from .fixture import build_fixture, read_tasks, write_fixture
from .pipeline import dataset as ds
from .pipeline.elicit import Elicited, RemoteGenerator, SamplingConfig, elicit_errors, rectify_failures
from .pipeline.oracle import ChatClient, HttpOracle, MockOracle
from .policy import load_policy, save_policy
from .trainer import MetricsWriter, TrainConfig, train

log = logging.getLogger("spot")

EXIT_CODES = {
    "usage": 2,
    "config": 3,
    "missing-credential": 4,
    "io": 5,
    "runtime": 6,
}

SAMPLING_SCHEMA = {
    "type": "object",
    "properties": {
        "temperature": {"type": "number", "exclusiveMinimum": 0, "default": 0.7},
        "top_p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1, "default": 0.8},
        "max_len": {"type": "integer", "minimum": 1, "default": 64},
        "seed": {"type": "integer", "default": 0},
        "marker": {"type": "string", "minLength": 1, "default": "="},
        "remote": {
            "type": "object",
            "properties": {"base_url": {"type": "string"}, "model": {"type": "string"}},
            "required": ["base_url", "model"],
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

TRAIN_SCHEMA = {
    "type": "object",
    "properties": {
        "objective": {"enum": ["sft", "sft_plus", "reward_sft", "dpo", "spot_bce", "spot_bco"]},
        "learning_rate": {"type": "number", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "epochs": {"type": "integer", "minimum": 1},
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "ema_alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "seed": {"type": "integer"},
        "optimizer": {"enum": ["sgd", "adam"]},
        "adam_beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "adam_beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "adam_eps": {"type": "number", "exclusiveMinimum": 0},
        "max_steps": {"type": ["integer", "null"], "minimum": 1},
        "grad_clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "delta_fixed": {"type": ["number", "null"]},
    },
    "required": ["objective"],
    "additionalProperties": False,
}

HELP_DEFAULTS = (
    "Defaults follow the published recipe: beta=0.1, batch size 32, 2 epochs, "
    "sampling temperature 0.7 and top-p 0.8, change-ratio threshold 0.6. "
    "The learning rate defaults to a toy-scale value (0.05, adam)."
)


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", message)
        sys.exit(EXIT_CODES["usage"])


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _load_config(path, schema) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError("io", f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError("config", f"{path}: invalid JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CliError("config", f"{path}: {where}: {exc.message}") from exc
    return doc


@dataclass
class Manifest:
    command: str
    argv: list[str]
    config: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def write(self, artifact: Path, started: float) -> Path:
        doc = {
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "tool_version": __version__,
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
            "duration_s": round(time.time() - started, 6),
            **self.extra,
        }
        target = Path(str(artifact) + ".manifest.json")
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".manifest-", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, target)
        return target


def _guard_outputs(inputs: list, outputs: list) -> None:
    ins = {Path(p).resolve() for p in inputs if p is not None}
    for out in outputs:
        if out is not None and Path(out).resolve() in ins:
            raise CliError("config", f"output {out} would overwrite an input file")


def cmd_make_fixture(args) -> Manifest:
    fx = build_fixture(seed=args.seed)
    write_fixture(fx, args.out)
    return Manifest("make-fixture", [], {"seed": args.seed}, outputs={"dir": str(args.out)}, seed=args.seed)


def cmd_elicit(args) -> Manifest:
    _guard_outputs([args.config, args.policy, args.tasks], [args.out])
    cfg = _load_config(args.config, SAMPLING_SCHEMA)
    sampling = SamplingConfig(
        temperature=cfg.get("temperature", 0.7),
        top_p=cfg.get("top_p", 0.8),
        max_len=cfg.get("max_len", 64),
        seed=cfg.get("seed", 0),
    )
    marker = cfg.get("marker", "=")
    tasks = read_tasks(args.tasks)
    if "remote" in cfg:
        client = ChatClient(cfg["remote"]["base_url"], cfg["remote"]["model"], os.environ.get("SPOT_GENERATOR_KEY"))
        generator = RemoteGenerator(client)
    else:
        if args.policy is None:
            raise CliError("config", "--policy is required unless the config selects a remote generator")
        generator = load_policy(args.policy)
    result = elicit_errors(generator, tasks, sampling, marker=marker)
    ds.write_jsonl(args.out, ds.ELICITED_FORMAT, (e.to_dict() for e in result.failures))
    stats = {
        "n_tasks": result.n_tasks,
        "n_passed": result.n_passed,
        "n_failures": len(result.failures),
        "n_parse_failed": result.n_parse_failed,
        "pass_rate": result.pass_rate,
    }
    print(json.dumps(stats))
    return Manifest(
        "elicit", [], cfg,
        inputs={"config": str(args.config), "policy": str(args.policy), "tasks": str(args.tasks)},
        outputs={"elicited": str(args.out)},
        seed=sampling.seed,
        extra={"stats": stats},
    )


def cmd_rectify(args) -> Manifest:
    _guard_outputs([args.inp, args.policy], [args.out])
    failures = [Elicited.from_dict(rec) for _, rec in ds.read_jsonl(args.inp, ds.ELICITED_FORMAT)]
    vocab = load_policy(args.policy).vocab if args.policy else None
    if vocab is None and any(not isinstance(f.rejected, str) for f in failures):
        raise CliError("config", "token-id responses need --policy to supply the vocabulary")
    if args.oracle == "http":
        if not (args.base_url and args.model):
            raise CliError("config", "--oracle http needs --base-url and --model")
        oracle = HttpOracle(args.base_url, args.model)
    else:
        oracle = MockOracle(args.mock_mode)
    created_at = None
    if os.environ.get("SOURCE_DATE_EPOCH"):
        created_at = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(int(os.environ["SOURCE_DATE_EPOCH"])))
    report = rectify_failures(
        oracle, failures, vocab,
        with_ground_truth=args.ground_truth,
        max_in_flight=args.max_in_flight,
        created_at=created_at,
        max_attempts=args.max_attempts,
    )
    ds.write_dataset(report.pairs, args.out)
    stats = {"n_in": len(failures), "n_pairs": len(report.pairs), "n_dropped": len(report.dropped)}
    print(json.dumps(stats))
    config = {
        "oracle": args.oracle,
        "mock_mode": args.mock_mode,
        "base_url": args.base_url,
        "model": args.model,
        "ground_truth": args.ground_truth,
        "max_in_flight": args.max_in_flight,
        "max_attempts": args.max_attempts,
    }
    return Manifest(
        "rectify", [], config,
        inputs={"elicited": str(args.inp), "policy": str(args.policy)},
        outputs={"pairs": str(args.out)},
        extra={"stats": stats, "dropped": [{"task_id": t, "reason": r} for t, r in report.dropped]},
    )


def cmd_filter(args) -> Manifest:
    _guard_outputs([args.inp], [args.out, args.histogram, args.dropped])
    pairs = ds.read_dataset(args.inp)
    result = ds.filter_pairs(pairs, args.gamma)
    ds.write_dataset(result.kept, args.out)
    outputs = {"kept": str(args.out)}
    if args.histogram:
        ds.write_histogram(result.histogram, args.histogram)
        outputs["histogram"] = str(args.histogram)
    if args.dropped:
        ds.write_dataset(result.dropped, args.dropped)
        outputs["dropped"] = str(args.dropped)
    stats = {"n_in": len(pairs), "n_kept": len(result.kept), "n_dropped": len(result.dropped)}
    print(json.dumps(stats))
    return Manifest("filter", [], {"gamma": args.gamma}, inputs={"pairs": str(args.inp)}, outputs=outputs,
                    extra={"stats": stats})


def cmd_train(args) -> Manifest:
    _guard_outputs([args.config, args.data, args.policy], [args.metrics, args.checkpoint])
    cfg_doc = _load_config(args.config, TRAIN_SCHEMA)
    config = TrainConfig.from_dict(cfg_doc)
    pairs = ds.read_dataset(args.data)
    for i, p in enumerate(pairs):
        if any(isinstance(s, str) for s in (p.prompt, p.chosen, p.rejected)):
            raise CliError("config", f"{args.data}: pair {i} is text; the toy trainer needs token ids")
    policy = load_policy(args.policy)
    with MetricsWriter(args.metrics) as writer:
        final, metrics = train(config, pairs, policy, metrics_writer=writer)
    save_policy(final, args.checkpoint)
    summary = {"steps": len(metrics)}
    if metrics:
        summary.update(first_loss=metrics[0].loss, final_loss=metrics[-1].loss)
    print(json.dumps(summary))
    return Manifest(
        "train", [], config.to_dict(),
        inputs={"config": str(args.config), "data": str(args.data), "policy": str(args.policy)},
        outputs={"metrics": str(args.metrics), "checkpoint": str(args.checkpoint)},
        seed=config.seed,
        extra={"summary": summary},
    )


def cmd_gen_connect4(args) -> Manifest:
    instances = connect4.generate_dataset(args.count, args.seed, args.empty_cap)
    connect4.write_bench(instances, args.out)
    empty = sum(not inst.has_answer for inst in instances)
    stats = {"count": len(instances), "empty_fraction": empty / len(instances)}
    print(json.dumps(stats))
    return Manifest(
        "gen-connect4", [], {"count": args.count, "seed": args.seed, "empty_cap": args.empty_cap},
        outputs={"dataset": str(args.out)}, seed=args.seed, extra={"stats": stats},
    )


def _read_answers(path) -> dict:
    answers = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            answers[rec["id"]] = (rec.get("wins_self", []), rec.get("wins_opponent", []))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetFormatError(f"bad answer record: {exc}", path=path, line=lineno) from exc
    return answers


def cmd_verify_connect4(args) -> Manifest:
    instances = connect4.read_bench(args.dataset)
    answers = _read_answers(args.answers)
    details = []
    n_correct = 0
    for inst in instances:
        claimed = answers.get(inst.id)
        if claimed is None:
            details.append({"id": inst.id, "correct": False, "diagnostics": ["no answer"]})
            continue
        check = connect4.verify_answer(inst, claimed[0], claimed[1])
        n_correct += check.correct
        details.append({"id": inst.id, **check.__dict__})
    report = {"n": len(instances), "correct": n_correct, "accuracy": n_correct / len(instances)}
    print(json.dumps(report))
    target = Path(args.report) if args.report else Path(str(args.answers) + ".report.json")
    target.write_text(json.dumps({**report, "details": details}, indent=1) + "\n", encoding="utf-8")
    return Manifest(
        "verify-connect4", [], {},
        inputs={"dataset": str(args.dataset), "answers": str(args.answers)},
        outputs={"report": str(target)},
        extra={"summary": report},
    )


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spot", description="Surgical post-training toy laboratory. " + HELP_DEFAULTS)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"spot {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-fixture", help="write the synthetic shared-prefix fixture")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_fixture, artifact="out_manifest")

    s = sub.add_parser("elicit", help="sample one response per task and keep verifier failures",
                       description="Sampling defaults: temperature 0.7, top-p 0.8 (published recipe).")
    s.add_argument("--config", required=True, type=Path, help="sampling config JSON")
    s.add_argument("--policy", type=Path, help="policy checkpoint (toy mode)")
    s.add_argument("--tasks", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_elicit, artifact="out")

    s = sub.add_parser("rectify", help="send failures to an oracle and build contrastive pairs")
    s.add_argument("--in", dest="inp", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--policy", type=Path, help="checkpoint whose vocab renders token responses")
    s.add_argument("--oracle", choices=["mock", "http"], default="mock")
    s.add_argument("--mock-mode", choices=MockOracle.MODES, default="answer-fix")
    s.add_argument("--base-url")
    s.add_argument("--model")
    s.add_argument("--ground-truth", action=argparse.BooleanOptionalAction, default=True,
                   help="include the reference answer in the oracle prompt")
    s.add_argument("--max-in-flight", type=int, default=8)
    s.add_argument("--max-attempts", type=int, default=3)
    s.set_defaults(func=cmd_rectify, artifact="out")

    s = sub.add_parser("filter", help="drop pairs whose change ratio exceeds gamma")
    s.add_argument("--in", dest="inp", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--gamma", type=float, default=ds.DEFAULT_GAMMA, help="threshold (published value 0.6)")
    s.add_argument("--histogram", type=Path)
    s.add_argument("--dropped", type=Path)
    s.set_defaults(func=cmd_filter, artifact="out")

    s = sub.add_parser("train", help="train a policy on contrastive pairs",
                       description="Config defaults: beta 0.1, batch 32, 2 epochs (published recipe); "
                                   "lr 0.05 with adam (toy scale).")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--policy", required=True, type=Path, help="initial policy checkpoint")
    s.add_argument("--metrics", required=True, type=Path)
    s.add_argument("--checkpoint", required=True, type=Path)
    s.set_defaults(func=cmd_train, artifact="checkpoint")

    s = sub.add_parser("gen-connect4", help="generate the Connect4 winning-move benchmark")
    s.add_argument("--count", type=int, default=connect4.DEFAULT_COUNT)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--empty-cap", type=float, default=connect4.DEFAULT_EMPTY_CAP)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_gen_connect4, artifact="out")

    s = sub.add_parser("verify-connect4", help="score claimed winning moves against ground truth")
    s.add_argument("--dataset", required=True, type=Path)
    s.add_argument("--answers", required=True, type=Path, help='JSONL of {"id", "wins_self", "wins_opponent"}')
    s.add_argument("--report", type=Path)
    s.set_defaults(func=cmd_verify_connect4, artifact="answers")
    return p


def _artifact_path(args) -> Path:
    if args.artifact == "out_manifest":
        return Path(args.out) / "fixture"
    if args.artifact == "answers":
        return Path(args.report) if args.report else Path(str(args.answers) + ".report.json")
    return Path(getattr(args, args.artifact))


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        manifest = args.func(args)
        manifest.argv = argv
        manifest.write(_artifact_path(args), started)
    except CliError as exc:
        _emit_error(exc.kind, str(exc))
        return EXIT_CODES[exc.kind]
    except MissingCredentialError as exc:
        _emit_error("missing-credential", str(exc))
        return EXIT_CODES["missing-credential"]
    except (InvalidInputError, IllegalMoveError) as exc:
        _emit_error("config", str(exc))
        return EXIT_CODES["config"]
    except (DatasetFormatError, OSError) as exc:
        _emit_error("io", str(exc))
        return EXIT_CODES["io"]
    except (TransportError, OracleParseError, ResourceError, NonFiniteError, SpotError) as exc:
        _emit_error("runtime", str(exc))
        return EXIT_CODES["runtime"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
