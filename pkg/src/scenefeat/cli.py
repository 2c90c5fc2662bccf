"""Command-line pipeline: corpus, features, training, embeddings, metrics.

Every subcommand resolves its options as CLI flag > config file > default,
logs the resolved configuration to stderr, validates inputs before writing
anything, and prints a single machine-readable JSON line to stdout.
Exit codes: 0 success, 1 input error, 2 internal failure.
"""

import argparse
import json
import logging
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import default_scenarios, generate_corpus, load_manifest
from .dsp import DspConfig, log_mel, mfcc
from .evaluation import evaluate_corpus, project_2d, write_projection_csv
from .features import assemble_features, embed_utterance, scenario_vector
from .matrixio import load_matrix, save_matrix
from .model import load_checkpoint
from .pipeline import load_clip_features
from .sampling import SamplerConfig
from .training import (FINAL_CHECKPOINT_NAME, LOSS_CURVE_NAME, ModelConfig,
                       TrainConfig, train)
from .wavio import load_waveform

log = logging.getLogger(__name__)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


@dataclass(frozen=True)
class _Opt:
    flag: str
    type: object
    default: object = None
    required: bool = False
    help: str = ""

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


_COMMON = [_Opt("--config", str, help="key=value file; flags take precedence")]


def _corpus_opts():
    return [
        _Opt("--out", str, required=True, help="output corpus directory"),
        _Opt("--scenarios", int, 5, help="how many stock scenarios to use"),
        _Opt("--utts", int, 100, help="utterances per scenario"),
        _Opt("--duration", float, 10.0, help="max utterance duration, seconds"),
        _Opt("--seed", int, 0),
        _Opt("--threads", int, 1),
    ] + _COMMON


def _extract_opts():
    return [
        _Opt("--manifest", str, required=True),
        _Opt("--out", str, required=True, help="directory for SCNM dumps"),
        _Opt("--threads", int, 1),
    ] + _COMMON


def _train_opts():
    return [
        _Opt("--manifest", str, required=True),
        _Opt("--out", str, required=True, help="checkpoint/curve directory"),
        _Opt("--steps", int, 2000),
        _Opt("--lr", float, 1e-3),
        _Opt("--delta", float, 0.5, help="triplet margin"),
        _Opt("--tau", float, 10.0, help="temporal proximity, seconds"),
        _Opt("--mode", str, "clip", help="sampler mode: clip or temporal"),
        _Opt("--batch-clips", int, 8),
        _Opt("--batch-windows", int, 4),
        _Opt("--dim", int, 64, help="embedding dimensionality"),
        _Opt("--seed", int, 0),
        _Opt("--threads", int, 1),
    ] + _COMMON


def _embed_opts():
    return [
        _Opt("--manifest", str, required=True),
        _Opt("--ckpt", str, required=True),
        _Opt("--out", str, required=True),
        _Opt("--threads", int, 1),
    ] + _COMMON


def _assemble_opts():
    return [
        _Opt("--manifest", str, required=True),
        _Opt("--ckpt", str, required=True),
        _Opt("--out", str, required=True),
        _Opt("--aux", str, help="SCNM matrix, one row per manifest entry"),
        _Opt("--threads", int, 1),
    ] + _COMMON


def _eval_opts():
    return [
        _Opt("--manifest", str, required=True),
        _Opt("--ckpt", str, required=True),
        _Opt("--out", str, required=True),
        _Opt("--seed", int, 0),
        _Opt("--threads", int, 1),
    ] + _COMMON


def _project_opts():
    return [
        _Opt("--manifest", str, required=True),
        _Opt("--ckpt", str, required=True),
        _Opt("--out", str, required=True),
        _Opt("--method", str, "pca", help="pca or tsne"),
        _Opt("--perplexity", float, 30.0),
        _Opt("--seed", int, 0),
        _Opt("--threads", int, 1),
    ] + _COMMON


def _read_config_file(path: str) -> dict:
    path = Path(path)
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                  start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, opts) -> dict:
    """Merge CLI > config file > defaults, then log the resolved config."""
    by_dest = {o.dest: o for o in opts}
    file_values = {}
    if getattr(args, "config", None):
        raw = _read_config_file(args.config)
        unknown = sorted(set(raw) - set(by_dest) - {"config"})
        if unknown:
            raise ValueError(
                f"{args.config}: unknown config keys {', '.join(unknown)}"
            )
        for key, text in raw.items():
            try:
                file_values[key] = by_dest[key].type(text)
            except (TypeError, ValueError):
                raise ValueError(
                    f"{args.config}: bad value {text!r} for key {key}"
                ) from None

    resolved = {}
    for opt in opts:
        if opt.dest == "config":
            continue
        value = getattr(args, opt.dest, None)
        if value is None:
            value = file_values.get(opt.dest, opt.default)
        if value is None and opt.required:
            raise ValueError(f"missing required option {opt.flag}")
        resolved[opt.dest] = value
    for key in sorted(resolved):
        log.info("config %s=%s", key, resolved[key])
    return resolved


def _print_result(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _cmd_gen_corpus(cfg) -> int:
    specs = default_scenarios(cfg["scenarios"])
    manifest = generate_corpus(
        specs, cfg["utts"], cfg["out"], duration_s=cfg["duration"],
        seed=cfg["seed"], threads=cfg["threads"],
    )
    _print_result({
        "manifest": str(Path(cfg["out"]) / "manifest.tsv"),
        "utterances": len(manifest),
        "scenarios": len(specs),
    })
    return 0


def _cmd_extract(cfg) -> int:
    manifest = load_manifest(cfg["manifest"])
    if len(manifest) == 0:
        raise ValueError("manifest has no entries")
    dsp_config = DspConfig()
    computed = []
    for entry in manifest.entries:
        wave = load_waveform(manifest.wav_path(entry))
        logmel = log_mel(wave, dsp_config.frame_len_s, dsp_config.frame_hop_s,
                         dsp_config.mel)
        computed.append((entry.utt_id, logmel.frames, mfcc(logmel).frames))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for utt_id, logmel_frames, mfcc_frames in computed:
        save_matrix(out / f"{utt_id}.logmel.scnm", logmel_frames)
        save_matrix(out / f"{utt_id}.mfcc.scnm", mfcc_frames)
    _print_result({"out": str(out), "utterances": len(computed),
                   "files": 2 * len(computed)})
    return 0


def _cmd_train(cfg) -> int:
    manifest = load_manifest(cfg["manifest"])
    sampler = SamplerConfig(mode=cfg["mode"], tau_s=cfg["tau"],
                            rng_seed=cfg["seed"])
    train_cfg = TrainConfig(
        steps=cfg["steps"], clips_per_batch=cfg["batch_clips"],
        windows_per_clip=cfg["batch_windows"], learning_rate=cfg["lr"],
        margin=cfg["delta"], seed=cfg["seed"],
    )
    model_cfg = ModelConfig(embed_dim=cfg["dim"])
    _, curve = train(manifest, None, sampler, model_cfg, train_cfg,
                     cfg["out"], threads=cfg["threads"])
    out = Path(cfg["out"])
    _print_result({
        "checkpoint": str(out / FINAL_CHECKPOINT_NAME),
        "loss_curve": str(out / LOSS_CURVE_NAME),
        "steps": cfg["steps"],
        "final_total_loss": curve[-1][1],
        "final_active_fraction": curve[-1][2],
    })
    return 0


def _scenario_matrix(manifest, model, threads):
    clips = load_clip_features(manifest, threads=threads)
    rows = []
    for clip in clips:
        emb = embed_utterance(model, clip.windows)
        rows.append(scenario_vector(emb, utt_id=clip.utt_id))
    return clips, rows


def _cmd_embed(cfg) -> int:
    manifest = load_manifest(cfg["manifest"])
    model = load_checkpoint(cfg["ckpt"])
    clips, vectors = _scenario_matrix(manifest, model, cfg["threads"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    matrix = np.stack([v.values for v in vectors])
    save_matrix(out / "scenario_vectors.scnm", matrix)
    sidecar = "".join(f"{i}\t{v.utt_id}\n" for i, v in enumerate(vectors))
    (out / "scenario_vectors.tsv").write_text(sidecar, encoding="utf-8")
    _print_result({
        "vectors": str(out / "scenario_vectors.scnm"),
        "rows": matrix.shape[0],
        "dim": matrix.shape[1],
    })
    return 0


def _cmd_assemble(cfg) -> int:
    manifest = load_manifest(cfg["manifest"])
    model = load_checkpoint(cfg["ckpt"])
    aux_by_utt = {}
    if cfg["aux"] is not None:
        aux = load_matrix(cfg["aux"])
        if aux.shape[0] != len(manifest):
            raise ValueError(
                f"aux matrix has {aux.shape[0]} rows, manifest has {len(manifest)}"
            )
        aux_by_utt = {e.utt_id: aux[i] for i, e in enumerate(manifest.entries)}

    dsp_config = DspConfig()
    clips = load_clip_features(manifest, dsp_config, with_mfcc=True,
                               threads=cfg["threads"])
    assembled = []
    for clip in clips:
        emb = embed_utterance(model, clip.windows)
        scen = scenario_vector(emb, utt_id=clip.utt_id)
        feat = assemble_features(clip.mfcc, aux_by_utt.get(clip.utt_id), scen)
        assembled.append((clip.utt_id, feat))

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for utt_id, feat in assembled:
        save_matrix(out / f"{utt_id}.features.scnm", feat.frames)
    columns = assembled[0][1].frames.shape[1]
    _print_result({"out": str(out), "utterances": len(assembled),
                   "columns": columns})
    return 0


def _cmd_eval(cfg) -> int:
    manifest = load_manifest(cfg["manifest"])
    model = load_checkpoint(cfg["ckpt"])
    report = evaluate_corpus(manifest, model, cfg["out"], seed=cfg["seed"],
                             threads=cfg["threads"])
    sys.stdout.write(report.to_json())
    return 0


def _cmd_project(cfg) -> int:
    if cfg["method"] not in ("pca", "tsne"):
        raise ValueError(f"unknown method {cfg['method']!r}, want pca or tsne")
    manifest = load_manifest(cfg["manifest"])
    model = load_checkpoint(cfg["ckpt"])
    clips, vectors = _scenario_matrix(manifest, model, cfg["threads"])
    matrix = np.stack([v.values for v in vectors])
    coords = project_2d(matrix, method=cfg["method"],
                        perplexity=cfg["perplexity"], seed=cfg["seed"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "projection.csv"
    write_projection_csv(path, [c.utt_id for c in clips], coords,
                         [c.label for c in clips])
    _print_result({"projection": str(path), "rows": coords.shape[0],
                   "method": cfg["method"]})
    return 0


_SUBCOMMANDS = {
    "gen-corpus": ("generate a synthetic scenario corpus", _corpus_opts,
                   _cmd_gen_corpus),
    "extract": ("dump log-mel and MFCC matrices per utterance", _extract_opts,
                _cmd_extract),
    "train": ("train the window embedder", _train_opts, _cmd_train),
    "embed": ("write per-utterance scenario vectors", _embed_opts, _cmd_embed),
    "assemble": ("write per-frame assembled feature matrices", _assemble_opts,
                 _cmd_assemble),
    "eval": ("run the metric battery and write an EvalReport", _eval_opts,
             _cmd_eval),
    "project": ("project scenario vectors to 2-D", _project_opts,
                _cmd_project),
}


def build_parser() -> _Parser:
    parser = _Parser(prog="scenefeat",
                     description="scenario-aware speech feature pipeline")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (help_text, opts_fn, _) in _SUBCOMMANDS.items():
        sub = subs.add_parser(name, help=help_text)
        for opt in opts_fn():
            sub.add_argument(opt.flag, dest=opt.dest, type=opt.type,
                             default=None, help=opt.help)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"error: {err}\n")
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("error: a subcommand is required\n")
        return 1

    _, opts_fn, handler = _SUBCOMMANDS[args.command]
    try:
        cfg = _resolve(args, opts_fn())
        return handler(cfg)
    except (ValueError, OSError) as err:
        sys.stderr.write(f"error: {err}\n")
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
