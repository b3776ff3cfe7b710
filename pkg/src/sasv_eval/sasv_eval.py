import argparse
import logging
from collections.abc import Callable, Sequence
from pathlib import Path
from time import perf_counter
from typing import Final, TextIO

from sasv_utils.artifact_hash import log_written
from sasv_utils.data_verification import EmbeddingError, ParseError, TrainingError, ValidationError
from sasv_utils.embedding_store import EmbeddingStores, cosine_scoring, load_embeddings, write_embeddings
from sasv_utils.fusion.mlp_backend import (
    backend_score,
    load_model,
    mlp_train,
    protocol_training_trials,
    write_model,
)
from sasv_utils.fusion.score_sum import NormalizerKind, fit_normalizer, score_sum
from sasv_utils.fusion.training_trials import build_training_trials
from sasv_utils.metrics import EerReport, EerResult, Metric, evaluate, labeled_scores, det_points, relative_reduction
from sasv_utils.protocol import (
    TrialProtocol,
    load_enrollment_map,
    load_protocol,
    load_utterance_labels,
    write_enrollment_map,
    write_protocol,
    write_utterance_labels,
)
from sasv_utils.score_io import (
    ResultsSummary,
    ScoreSet,
    load_scores,
    validate_against_protocol,
    write_results,
    write_scores,
)
from sasv_utils.synthetic import synth_embeddings, synth_scores

from .run_config import RunConfig, resolve

logger = logging.getLogger(__name__)

EXIT_OK: Final = 0
EXIT_INVALID: Final = 1
EXIT_IO: Final = 2


def percent(result: EerResult | None) -> str:
    return "n/a" if result is None else f"{100.0 * result.eer:.2f}%"

def write_artifact(path: Path, writer: Callable[[TextIO], None]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        writer(handle)
    log_written(path)

def output_path(config: RunConfig) -> Path:
    """--output, else scores_{split}_{team}.txt under --output-dir."""
    if config.get("output") is not None:
        return Path(config["output"])
    if config.get("team") is None or config.get("split") is None:
        raise ValidationError(f"{config.command}: give --output, or --team and --split")
    return Path(config["output_dir"]) / f"scores_{config['split']}_{config['team']}.txt"

def load_stores(config: RunConfig) -> EmbeddingStores:
    enrollment = config.path("enrol_embeddings")
    return EmbeddingStores(
        speaker=load_embeddings(config["speaker_embeddings"]),
        cm=load_embeddings(config["cm_embeddings"]),
        enrollment=load_embeddings(enrollment) if enrollment is not None else None,
    )


def cmd_validate(config: RunConfig) -> int:
    config.require("protocol", "scores")
    protocol = load_protocol(config["protocol"])
    scores = load_scores(config["scores"])

    report = validate_against_protocol(scores, protocol)
    if not report.is_empty:
        for line in report.lines():
            print(line)
        logger.error(f"{Path(config['scores']).name}: {len(report.missing)} missing, "
                     f"{len(report.extra)} extra, {len(report.mismatched)} mismatched trial(s)")
        return EXIT_INVALID

    print(f"OK: {len(scores)} trials match {Path(config['protocol']).name}")
    return EXIT_OK


def print_report(report: EerReport, prefix: str = "", per_attack: bool = False) -> None:
    for metric in (Metric.SASV, Metric.SV, Metric.SPF):
        print(f"{prefix}{metric}: {percent(report.get(metric))}")
    if per_attack:
        print(f"{prefix}per-attack SPF-EER:")
        for attack, result in report.per_attack.items():
            print(f"{prefix}  {attack}: {percent(result)}")

def write_det(path: Path, scores: ScoreSet) -> None:
    table = scores.table()

    def writer(sink: TextIO) -> None:
        for metric in Metric:
            labeled = labeled_scores(table, metric)
            if labeled is None:
                continue
            sink.write(f"# {metric}\n")
            for far, frr in det_points(labeled):
                sink.write(f"{far!r} {frr!r}\n")

    write_artifact(path, writer)

def print_reduction(report: EerReport, reference: EerReport, prefix: str = "") -> None:
    for metric in (Metric.SASV, Metric.SV, Metric.SPF):
        ours, theirs = report.get(metric), reference.get(metric)
        if ours is None or theirs is None:
            continue
        if theirs.eer == 0.0:
            print(f"{prefix}{metric} relative reduction: n/a (reference EER is 0)")
            continue
        print(f"{prefix}{metric} relative reduction: {100.0 * relative_reduction(theirs.eer, ours.eer):.2f}%")

def evaluate_split(protocol: TrialProtocol, scores: ScoreSet, config: RunConfig, prefix: str = "") -> EerReport:
    logger.debug(f"Scored trials:\n{scores.table().summary()}")
    report = evaluate(scores, protocol)
    print_report(report, prefix, per_attack=bool(config.get("per_attack")))

    if config.get("reference") is not None:
        reference = evaluate(load_scores(config["reference"]), protocol)
        print_reduction(report, reference, prefix)

    if config.get("det_out") is not None:
        write_det(Path(config["det_out"]), scores)

    return report

def cmd_evaluate(config: RunConfig) -> int:
    split_keys = ("dev_protocol", "dev_scores", "eval_protocol", "eval_scores")

    if any(config.get(k) is not None for k in split_keys):
        config.require(*split_keys, "team")
        dev = evaluate(load_scores(config["dev_scores"]), load_protocol(config["dev_protocol"]))
        print_report(dev, "dev ", per_attack=bool(config.get("per_attack")))
        # --reference and --det-out apply to the evaluation split
        ev = evaluate_split(load_protocol(config["eval_protocol"]), load_scores(config["eval_scores"]), config, "eval ")

        if None in (dev.sv, dev.spf, ev.sv, ev.spf):
            raise ValidationError("Results file needs SV-EER and SPF-EER on both splits")
        summary = ResultsSummary(dev.sasv.eer, dev.sv.eer, dev.spf.eer,   # type: ignore[union-attr]
                                 ev.sasv.eer, ev.sv.eer, ev.spf.eer)      # type: ignore[union-attr]
        write_artifact(Path(config["output_dir"]) / f"results_{config['team']}.csv",
                       lambda sink: write_results(summary, sink))
        return EXIT_OK

    config.require("protocol", "scores")
    evaluate_split(load_protocol(config["protocol"]), load_scores(config["scores"]), config)
    return EXIT_OK


def cmd_score_cosine(config: RunConfig) -> int:
    config.require("protocol", "enrollment", "speaker_embeddings", "output")
    protocol = load_protocol(config["protocol"], config["enrollment"])
    test_store = load_embeddings(config["speaker_embeddings"])
    enrollment = config.path("enrol_embeddings")
    enrol_store = load_embeddings(enrollment) if enrollment is not None else test_store

    scores = cosine_scoring(protocol, enrol_store, test_store)
    write_artifact(Path(config["output"]), lambda sink: write_scores(scores, sink))
    return EXIT_OK

def cmd_fuse(config: RunConfig) -> int:
    config.require("asv", "cm")
    target = output_path(config)
    asv = load_scores(config["asv"])
    cm = load_scores(config["cm"])

    fused = score_sum(asv, cm, fit_normalizer(NormalizerKind(config["normalizer"]), asv, cm))
    write_artifact(target, lambda sink: write_scores(fused, sink))
    return EXIT_OK

def cmd_backend_train(config: RunConfig) -> int:
    config.require("labels", "speaker_embeddings", "cm_embeddings", "model")
    training = config.training_config()
    stores = load_stores(config)
    labels = load_utterance_labels(config["labels"])
    enrollment = load_enrollment_map(config["enrollment"]) if config.get("enrollment") is not None else None

    held_out = None
    if config.get("held_out_protocol") is not None:
        config.require("held_out_enrollment")
        held_out = protocol_training_trials(load_protocol(config["held_out_protocol"], config["held_out_enrollment"]))

    trials = build_training_trials(labels, training, enrollment)

    start = perf_counter()
    model = mlp_train(trials, stores, training, held_out)
    logger.info(f"Training took {round(perf_counter() - start, 2)} seconds")

    write_artifact(Path(config["model"]), lambda sink: write_model(model, sink))
    return EXIT_OK

def cmd_backend_score(config: RunConfig) -> int:
    config.require("model", "protocol", "enrollment", "speaker_embeddings", "cm_embeddings")
    target = output_path(config)
    model = load_model(config["model"])
    protocol = load_protocol(config["protocol"], config["enrollment"])

    scores = backend_score(model, protocol, load_stores(config))
    write_artifact(target, lambda sink: write_scores(scores, sink))
    return EXIT_OK

def cmd_synth_scores(config: RunConfig) -> int:
    config.require("output_dir")
    out = Path(config["output_dir"])
    protocol, scores = synth_scores(config.synth_spec())

    assert protocol.enrollment is not None
    write_artifact(out / "protocol.txt", lambda sink: write_protocol(protocol, sink))
    write_artifact(out / "enrollment.txt", lambda sink: write_enrollment_map(protocol.enrollment, sink))
    write_artifact(out / "scores.txt", lambda sink: write_scores(scores, sink))
    return EXIT_OK

def cmd_synth_embeddings(config: RunConfig) -> int:
    config.require("output_dir")
    out = Path(config["output_dir"])
    synth = synth_embeddings(config.synth_spec())

    assert synth.protocol.enrollment is not None
    write_artifact(out / "protocol.txt", lambda sink: write_protocol(synth.protocol, sink))
    write_artifact(out / "enrollment.txt", lambda sink: write_enrollment_map(synth.protocol.enrollment, sink))
    write_artifact(out / "speaker_embeddings.txt", lambda sink: write_embeddings(synth.stores.speaker, sink))
    write_artifact(out / "cm_embeddings.txt", lambda sink: write_embeddings(synth.stores.cm, sink))
    write_artifact(out / "labels.txt", lambda sink: write_utterance_labels(synth.labels, sink))
    return EXIT_OK


COMMANDS: Final[dict[str, Callable[[RunConfig], int]]] = {
    "validate": cmd_validate,
    "evaluate": cmd_evaluate,
    "score-cosine": cmd_score_cosine,
    "fuse": cmd_fuse,
    "backend-train": cmd_backend_train,
    "backend-score": cmd_backend_score,
    "synth-scores": cmd_synth_scores,
    "synth-embeddings": cmd_synth_embeddings,
}


def _add_training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="Training seed")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--learning-rate", type=float)
    parser.add_argument("--hidden-dims", type=int, nargs=3, metavar="N")
    parser.add_argument("--sampling-ratios", type=float, nargs=3, metavar=("TARGET", "NONTARGET", "SPOOF"))
    parser.add_argument("--max-trials", type=int)
    parser.add_argument("--patience", type=int, help="Held-out epochs without improvement before stopping")

def _add_synth_flags(parser: argparse.ArgumentParser, embeddings: bool) -> None:
    parser.add_argument("--output-dir", type=str, help="Directory for the generated files")
    parser.add_argument("--n-target", type=int)
    parser.add_argument("--n-nontarget", type=int)
    parser.add_argument("--n-spoof", type=int)
    parser.add_argument("--dprime-sv", type=float)
    parser.add_argument("--dprime-spf", type=float)
    parser.add_argument("--n-speakers", type=int)
    parser.add_argument("--n-enrollment", type=int)
    parser.add_argument("--seed", type=int)
    if embeddings:
        parser.add_argument("--spk-dim", type=int)
        parser.add_argument("--cm-dim", type=int)

def _add_output_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--output", type=str, help="Score file to write")
    parser.add_argument("--team", type=str)
    parser.add_argument("--split", type=str, choices=("dev", "eval"))
    parser.add_argument("--output-dir", type=str)

def _add_logging_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--log-dir", type=Path, help="Directory for sasv_log.txt (default: current directory)")
    parser.add_argument("--quiet", action='store_true', help="Only warnings and errors on the terminal")

def logging_options(argv: Sequence[str]) -> tuple[Path, int]:
    """(log directory, console level) from the command line, read before the full parse."""
    parser = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    _add_logging_flags(parser)
    args, _ = parser.parse_known_args(argv)
    return args.log_dir or Path.cwd(), logging.WARNING if args.quiet else logging.INFO

def setup_parser(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="sasv_eval", description="Spoofing-aware speaker verification toolkit.")
    parser.add_argument("--config", type=Path, help="Flat hjson configuration file")
    _add_logging_flags(parser)
    commands =parser.add_subparsers(dest="command", required=True)

    validate = commands.add_parser("validate", help="Check a score file against a protocol")
    validate.add_argument("--protocol", type=str)
    validate.add_argument("--scores", type=str)

    evaluate_ = commands.add_parser("evaluate", help="SASV-EER, SV-EER and SPF-EER of a score file")
    evaluate_.add_argument("--protocol", type=str)
    evaluate_.add_argument("--scores", type=str)
    evaluate_.add_argument("--dev-protocol", type=str)
    evaluate_.add_argument("--dev-scores", type=str)
    evaluate_.add_argument("--eval-protocol", type=str)
    evaluate_.add_argument("--eval-scores", type=str)
    evaluate_.add_argument("--team", type=str)
    evaluate_.add_argument("--output-dir", type=str)
    evaluate_.add_argument("--per-attack", action='store_const', const=True)
    evaluate_.add_argument("--det-out", type=str, help="Write (FAR, FRR) points per metric")
    evaluate_.add_argument("--reference", type=str, help="Reference score file for relative EER reduction")

    cosine = commands.add_parser("score-cosine", help="Cosine ASV scores from speaker embeddings")
    cosine.add_argument("--protocol", type=str)
    cosine.add_argument("--enrollment", type=str)
    cosine.add_argument("--speaker-embeddings", type=str)
    cosine.add_argument("--enrol-embeddings", type=str)
    cosine.add_argument("--output", type=str)

    fuse = commands.add_parser("fuse", help="Score-sum fusion of ASV and CM scores")
    fuse.add_argument("--asv", type=str)
    fuse.add_argument("--cm", type=str)
    fuse.add_argument("--normalizer", type=str, choices=[k.value for k in NormalizerKind])
    _add_output_flags(fuse)

    backend = commands.add_parser("backend", help="MLP back-end over embeddings")
    backend_commands = backend.add_subparsers(dest="subcommand", required=True)

    train = backend_commands.add_parser("train")
    train.add_argument("--labels", type=str, help="Training pool label file")
    train.add_argument("--speaker-embeddings", type=str)
    train.add_argument("--cm-embeddings", type=str)
    train.add_argument("--enrollment", type=str)
    train.add_argument("--held-out-protocol", type=str)
    train.add_argument("--held-out-enrollment", type=str)
    train.add_argument("--model", type=str, help="Model file to write")
    _add_training_flags(train)

    score = backend_commands.add_parser("score")
    score.add_argument("--model", type=str)
    score.add_argument("--protocol", type=str)
    score.add_argument("--enrollment", type=str)
    score.add_argument("--speaker-embeddings", type=str)
    score.add_argument("--enrol-embeddings", type=str)
    score.add_argument("--cm-embeddings", type=str)
    _add_output_flags(score)

    synth = commands.add_parser("synth", help="Synthetic fixtures with known separability")
    synth_commands = synth.add_subparsers(dest="subcommand", required=True)
    _add_synth_flags(synth_commands.add_parser("scores"), embeddings=False)
    _add_synth_flags(synth_commands.add_parser("embeddings"), embeddings=True)

    return parser.parse_args(argv)

def command_name(args: argparse.Namespace) -> str:
    subcommand = getattr(args, "subcommand", None)
    return f"{args.command}-{subcommand}" if subcommand else args.command


def main(argv: Sequence[str] | None = None) -> int:
    args = setup_parser(argv)
    command = command_name(args)
    logger.debug(f"Run start: {command}")

    try:
        config = resolve(command, vars(args), args.config)
        print(config.dumps())
        config.check_inputs()
        status = COMMANDS[command](config)

    except ParseError as err:
        logger.error(str(err))
        return EXIT_IO

    except OSError as err:
        logger.error(f"I/O error: {err}")
        return EXIT_IO

    except ValidationError as err:
        lines = err.report.lines() if err.report is not None else []  # type: ignore[attr-defined]
        for line in lines:
            print(line)
        logger.error(str(err))
        return EXIT_INVALID

    except (EmbeddingError, TrainingError) as err:
        logger.error(str(err))
        return EXIT_INVALID

    logger.debug(f"Run ended: {command} (exit {status})")
    return status
