"""
`eegdec` command line: gen-data, train, eval, infer and gradcheck.

Results go to stdout as JSON (gradcheck prints a table); logs and errors go to
stderr. A failure prints one JSON error document and exits with the error's
code: 2 usage, 3 configuration, 4 data format, 5 numeric failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError

from eegdec.checkpoint import load_model
from eegdec.config import LOG_FORMAT, settings
from eegdec.data_io import SPLITS, load_manifest, read_signal, write_signal
from eegdec.errors import ConfigError, DecoderError, NumericError, UsageError
from eegdec.gradcheck import run_gradcheck
from eegdec.inference import TailPolicy, evaluate_split, infer_eeg, plan_chunks
from eegdec.model import build_model
from eegdec.run_config import ABLATIONS, PRESETS, describe_keys, load_config_file, resolve_run_config
from eegdec.synthetic import SyntheticSpec, generate_synthetic, write_dataset
from eegdec.tensor import Tensor
from eegdec.training import train

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """Usage problems raise `UsageError` instead of exiting, so they share the JSON error path."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _emit(document: Dict[str, Any]) -> None:
    print(json.dumps(document, indent=2))


def _load_model(path: str):
    if not Path(path).exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return load_model(path)


def cmd_gen_data(args: argparse.Namespace) -> int:
    try:
        spec = SyntheticSpec(
            n_subjects=args.subjects,
            recordings_per_subject=args.recordings,
            duration_seconds=args.seconds,
            channels=args.channels,
            noise_std=args.noise_std,
            filter_length=args.filter_length,
            sample_rate_hz=args.sample_rate,
            smoothing_samples=args.smoothing,
            seed=args.seed,
        )
    except ValidationError as exc:
        raise ConfigError(f"invalid synthetic dataset options: {exc}") from None
    manifest = write_dataset(generate_synthetic(spec), args.out)
    _emit({
        "out_dir": str(args.out),
        "manifest": str(Path(args.out) / "manifest.json"),
        "recordings": len(manifest.entries),
        "splits": {split: len(manifest.entries_for(split)) for split in SPLITS},
    })
    return 0


_TRAIN_SHORTCUTS = {
    "manifest": "paths.manifest",
    "out": "paths.output_dir",
    "resume": "paths.resume_from",
    "seed": "optim.seed",
    "max_steps": "optim.max_steps",
}


def cmd_train(args: argparse.Namespace) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {
        key: getattr(args, name) for name, key in _TRAIN_SHORTCUTS.items() if getattr(args, name) is not None
    }
    overrides.update({key: value for key, value in vars(args).items() if "." in key})

    manifest_path = overrides.get("paths.manifest", file_values.get("paths.manifest"))
    if not manifest_path:
        raise ConfigError("train needs a manifest (--manifest or paths.manifest)")
    manifest = load_manifest(manifest_path)
    config = resolve_run_config(args.preset, file_values, overrides, args.ablation, manifest)

    output_dir = Path(config.paths.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / "config.json").write_text(json.dumps(config.to_document(), indent=2))

    model = build_model(config.model, config.optim.seed)
    result = train(
        model,
        manifest,
        config.model,
        config.optim,
        config.loss,
        output_dir=output_dir,
        resume_from=config.paths.resume_from,
    )
    _emit({
        "output_dir": str(output_dir),
        "epochs": result.state.epoch,
        "steps": result.state.step,
        "best_val_r": result.state.best_val_r,
        "final_train_loss": result.history[-1]["train_loss"] if result.history else None,
        "last_checkpoint": str(result.last_checkpoint) if result.last_checkpoint else None,
        "best_checkpoint": str(result.best_checkpoint) if result.best_checkpoint else None,
    })
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model = _load_model(args.checkpoint)
    manifest = load_manifest(args.manifest)
    report = evaluate_split(
        model,
        manifest,
        args.split,
        args.chunk_samples or model.config.segment_samples,
        args.tail_policy,
        subject_ids=args.subjects,
        predictions_dir=args.predictions_dir,
    )
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report.to_json())
    print(report.to_json())
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    model = _load_model(args.checkpoint)
    signal = read_signal(args.eeg)
    subject_id = args.subject if args.subject is not None else signal.subject_id
    eeg = Tensor(signal.data.T)
    plan = plan_chunks(eeg.shape[0], args.chunk_samples or model.config.segment_samples, args.tail_policy)
    envelope = infer_eeg(model, eeg, subject_id, plan)
    write_signal(args.out, envelope.data[None, :], subject_id, signal.sample_rate_hz)
    _emit({"output": str(args.out), "samples": envelope.shape[0], "subject_id": subject_id})
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    rows = run_gradcheck(tolerance=args.tolerance, seed=args.seed)
    print(f"{'check':<20} {'max rel error':>14} {'values':>8}  result")
    for row in rows:
        print(f"{row.name:<20} {row.max_rel_error:>14.3e} {row.n_checked:>8}  {'ok' if row.passed else 'FAIL'}")
    failed = [row.name for row in rows if not row.passed]
    if failed:
        raise NumericError(f"gradient check failed for: {', '.join(failed)}")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
}


def _add_inference_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--chunk-samples", type=int, help="Chunk length in samples (default: the model's segment)")
    parser.add_argument(
        "--tail-policy",
        choices=[policy.value for policy in TailPolicy],
        default=TailPolicy.PROCESS_SHORT_TAIL.value,
        help="Keep or drop the final short chunk (default: %(default)s)",
    )


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="eegdec", description="EEG-to-speech-envelope decoder")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    gen = commands.add_parser("gen-data", help="Write a synthetic dataset and its manifest")
    gen.add_argument("--out", required=True, help="Output directory")
    gen.add_argument("--subjects", type=int, default=4)
    gen.add_argument("--recordings", type=int, default=2, help="Recordings per subject")
    gen.add_argument("--seconds", type=float, default=60.0, help="Duration of each recording")
    gen.add_argument("--channels", type=int, default=64)
    gen.add_argument("--noise-std", type=float, default=0.1)
    gen.add_argument("--filter-length", type=int, default=8, help="Taps of each subject's FIR response")
    gen.add_argument("--sample-rate", type=int, default=64)
    gen.add_argument("--smoothing", type=int, default=16, help="Envelope smoothing width in samples")
    gen.add_argument("--seed", type=int, default=0)

    trainer = commands.add_parser(
        "train",
        help="Train a decoder",
        description="Train a decoder. Every config key below can also be set in a --config JSON file.",
    )
    trainer.add_argument("--config", help="JSON file of flat dotted config keys")
    trainer.add_argument("--preset", choices=sorted(PRESETS), help="Configuration preset (default: default)")
    trainer.add_argument(
        "--ablation", action="append", default=[], choices=sorted(ABLATIONS), help="Remove one component (repeatable)"
    )
    trainer.add_argument("--manifest", help="Dataset manifest (paths.manifest)")
    trainer.add_argument("--out", help="Output directory (paths.output_dir)")
    trainer.add_argument("--resume", help="Checkpoint to resume from (paths.resume_from)")
    trainer.add_argument("--seed", type=int, help="Root seed (optim.seed)")
    trainer.add_argument("--max-steps", type=int, help="Stop after this many optimizer steps (optim.max_steps)")
    keys = trainer.add_argument_group("config keys")
    for flag, text in describe_keys():
        keys.add_argument(flag, dest=flag[2:], default=argparse.SUPPRESS, metavar="VALUE", help=text.replace("%", "%%"))

    evaluator = commands.add_parser("eval", help="Evaluate a checkpoint on a manifest split")
    evaluator.add_argument("--checkpoint", required=True)
    evaluator.add_argument("--manifest", required=True)
    evaluator.add_argument("--split", choices=SPLITS, default="test")
    evaluator.add_argument("--subjects", type=int, nargs="+", help="Only evaluate these subject ids")
    evaluator.add_argument("--predictions-dir", help="Also write predicted envelopes as EEGR files here")
    evaluator.add_argument("--out", help="Also write the report JSON to this file")
    _add_inference_options(evaluator)

    inferer = commands.add_parser("infer", help="Decode the envelope of one EEG file")
    inferer.add_argument("--checkpoint", required=True)
    inferer.add_argument("--eeg", required=True, help="EEGR EEG file")
    inferer.add_argument("--subject", type=int, help="Subject id (default: the file header's)")
    inferer.add_argument("--out", required=True, help="Output EEGR envelope file")
    _add_inference_options(inferer)

    checker = commands.add_parser("gradcheck", help="Compare autodiff gradients with finite differences")
    checker.add_argument("--tolerance", type=float, default=1e-4)
    checker.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=logging.DEBUG if settings.DEBUG else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except DecoderError as exc:
        error = exc
    except OSError as exc:
        error = ConfigError(f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc))
    logger.debug(f"Command failed: {error.message}", exc_info=True)
    print(json.dumps(error.to_dict()), file=sys.stderr)
    return error.exit_code
