"""Command-line entry point: ``dilearn {generate,protocol,eval,audit}``.

Every failure exits nonzero with one line on stderr of the form
``error[<kind>]: <message>``. Exit codes: 2 config, 3 data, 4 numeric,
5 checkpoint.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .data import generate_synthetic_domain, load_domain, load_manifest, write_dataset
from .errors import BankError, CheckpointError, ConfigError, DataError, DilError, GraphError, NumericError, ShapeError
from .metrics import method_comparison_table
from .model import ArchConfig, arch_param_audit, param_audit
from .tensor import set_precision
from .train import agnostic_score, evaluate, run_protocol

# CNN14 trunk: six blocks of two 3x3 convs, 64 log-mel bins, 10 scene classes
CNN14 = ArchConfig(n_freq=64, n_frames=1024, channels=(64, 128, 256, 512, 1024, 2048))
CNN14_CLASSES = 10

_ERRORS = [
    (ConfigError, "config", 2),
    (BankError, "config", 2),
    (ShapeError, "config", 2),
    (DataError, "data", 3),
    (NumericError, "numeric", 4),
    (GraphError, "numeric", 4),
    (CheckpointError, "checkpoint", 5),
    (OSError, "io", 3),
]


class _Parser(argparse.ArgumentParser):
    """Reports usage errors on a single ``error[usage]:`` line."""

    def error(self, message):
        self.exit(2, f"error[usage]: {message}\n")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_generate(args) -> int:
    run = load_config(args.config, seed=args.seed)
    # every spec is validated by load_config, so nothing is written for a bad config
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc.strerror}") from None
    seed = run.protocol.seed
    combined = ["# path,domain,labels"]
    for spec in run.synthetic:
        write_dataset(generate_synthetic_domain(spec, seed), out / spec.name)
        lines = (out / spec.name / "test.csv").read_text(encoding="utf-8").splitlines()[1:]
        combined += [f"{spec.name}/{line}" for line in lines]
        print(f"wrote {out / spec.name}")
    _write(out / "test.csv", "\n".join(combined) + "\n")
    return 0


def cmd_protocol(args) -> int:
    run = load_config(args.config, seed=args.seed, strategy=args.strategy, epochs=args.epochs)
    protocol = run.protocol
    if args.data is not None:
        data = args.data
    else:
        data = {s.name: generate_synthetic_domain(s, protocol.seed) for s in run.synthetic}
    result = run_protocol(protocol, data)
    out = Path(args.out)
    report = result.report
    _write(out / "report.json", report.to_json())
    _write(out / "report.csv", report.to_csv())
    _write(out / "current.csv", report.current_domain_table())
    _write(out / "methods.csv", method_comparison_table({protocol.strategy.value: report}))
    if result.agnostic is not None:
        _write(out / "agnostic_report.json", result.agnostic.to_json())
    for t, model in enumerate(result.models, start=1):
        meta = {"step": t, "strategy": protocol.strategy.value, "seed": protocol.seed, "domain": run.domain_names[t - 1]}
        save_checkpoint(model, out / f"step{t}.ckpt", meta)
    print(report.summary())
    return 0


def _true_bank(model, domain: str) -> int | None:
    for t, bank in enumerate(model.banks):
        if bank.spec.name == domain:
            return t
    return None


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest, model.vocabulary)
    domains = list(dict.fromkeys(r.domain for r in manifest.records))
    kind = model.banks[0].spec.task_kind
    doc: dict = {"checkpoint": str(args.checkpoint), "mode": "agnostic" if args.agnostic else "aware", "scores": {}}
    # scores are percentages, as in protocol reports
    if not args.agnostic:
        bank = model.bank(args.domain_id)
        doc["bank"] = args.domain_id
        for name in domains:
            data = load_domain(manifest, bank.spec.class_list, kind, name, model.arch.n_freq, model.arch.n_frames)
            doc["scores"][name] = 100.0 * evaluate(model, args.domain_id, data)
    else:
        confusion = {}
        for name in domains:
            classes = sorted({lbl for r in manifest.records if r.domain == name for lbl in r.labels})
            t = _true_bank(model, name)
            if t is not None:
                classes = list(model.banks[t].spec.class_list)
            data = load_domain(manifest, classes, kind, name, model.arch.n_freq, model.arch.n_frames)
            score, chosen = agnostic_score(model, data)
            doc["scores"][name] = 100.0 * score
            counts = Counter(model.banks[b].spec.name for b in chosen)
            confusion[name] = {model.banks[b].spec.name: counts.get(model.banks[b].spec.name, 0) for b in range(model.n_banks)}
        doc["selection_counts"] = confusion
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(Path(args.out), text)
    sys.stdout.write(text)
    return 0


def cmd_audit(args) -> int:
    if args.cnn14:
        audit = arch_param_audit(CNN14, CNN14_CLASSES)
        label = f"CNN14-scale trunk, {CNN14_CLASSES} classes"
    else:
        model, _ = load_checkpoint(args.checkpoint)
        audit = param_audit(model)
        label = str(args.checkpoint)
    print(f"model: {label}")
    print(f"shared parameters: {audit.shared_count}")
    print(f"per-domain parameters: {audit.per_domain_count}")
    print(f"shared fraction: {audit.shared_fraction:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--precision", choices=("f32", "f64"), default="f32", help="floating-point precision")
    parser = _Parser(prog="dilearn", description="Domain-incremental learning with per-domain BatchNorm banks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write synthetic domains and manifests")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("protocol", parents=[common], help="run the incremental protocol and write reports and checkpoints")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="dataset root with one directory per domain (default: generate in memory)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a manifest")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--domain-id", type=int)
    mode.add_argument("--agnostic", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("audit", parents=[common], help="count shared and per-domain parameters")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("checkpoint", nargs="?")
    target.add_argument("--cnn14", action="store_true", help="audit a CNN14-scale architecture instead")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    set_precision(args.precision)
    try:
        return args.func(args)
    except tuple(e for e, _, _ in _ERRORS) as exc:
        kind, code = next((k, c) for e, k, c in _ERRORS if isinstance(exc, e))
        print(f"error[{kind}]: {' '.join(str(exc).split())}", file=sys.stderr)
        return code
    except DilError as exc:
        print(f"error[internal]: {exc}", file=sys.stderr)
        return exc.exit_code
    finally:
        set_precision("f32")


if __name__ == "__main__":
    sys.exit(main())
