"""Command-line entry point.

Subcommands cover the whole workflow: build a clip manifest from
annotated sequences, run the closed loop over it, score label files,
oversample transition steps, reduce result tables, and serve the mock
backend.  ``run`` also accepts a JSON config whose keys mirror its flags
one to one; explicit flags win over config values.

Exit codes: 0 success, 2 bad input or usage, 1 runtime failure.  The
``MSTP_LOG`` environment variable sets the log level.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .agents import DecisionBackendDescriptor, markov_model_from_dict
from .analysis import (
    MarginalAccuracies,
    fit_accuracy_fid,
    mc_gap,
    product_bound,
    write_fit_series,
)
from .augment import AUTO, AugmentConfig, augment_transitions, find_transitions, write_augmented
from .dataset import SplitSpec, build_clips, read_manifest, split_clips, write_manifest
from .engine import (
    EVERY_STEP,
    GATE_POLICIES,
    RunSettings,
    evaluate_clips,
    write_scores,
    write_trajectories,
)
from .errors import MstpError, ParseError, ValidationError
from .generation import GeneratorDescriptor
from .manifests import read_schema, read_sequences
from .metrics.report import report_rows, write_report
from .metrics.state import joint_state_metrics, state_metrics
from .model import StateVector, make_time_grid
from .sequences import resample_to_grid

logger = logging.getLogger(__name__)


def _setup_logging() -> None:
    name = os.environ.get("MSTP_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )


# ---------------------------------------------------------------------------
# backend descriptor grammars
# ---------------------------------------------------------------------------

def _split_trailing_int(text: str) -> tuple[str, int]:
    head, sep, tail = text.rpartition(":")
    if sep and tail.lstrip("-").isdigit():
        return head, int(tail)
    return text, 0


def parse_dm(text: str, default_seed: int = 0) -> DecisionBackendDescriptor:
    """Decision descriptor grammar.

    ``oracle:gt`` | ``noisy:P1,P2,..[:MODE[:SEED]]`` | ``markov:PATH[:SEED]``
    | ``scripted:PATH`` | ``remote:URL``.
    """
    kind, _, rest = text.partition(":")
    if kind == "oracle":
        if rest != "gt":
            raise ValidationError(f"unknown oracle variant {rest!r}, expected gt")
        return DecisionBackendDescriptor("ground_truth")
    if kind == "noisy":
        fields = rest.split(":")
        try:
            probs = tuple(float(x) for x in fields[0].split(",") if x)
        except ValueError as exc:
            raise ValidationError(f"bad noisy probabilities {fields[0]!r}") from exc
        if not probs:
            raise ValidationError("noisy backend needs per-level probabilities")
        mode = fields[1] if len(fields) > 1 and fields[1] else "independent"
        seed = int(fields[2]) if len(fields) > 2 else default_seed
        return DecisionBackendDescriptor(
            "noisy", {"probabilities": probs, "mode": mode, "seed": seed}
        )
    if kind == "markov":
        path, seed = _split_trailing_int(rest)
        if not path:
            raise ValidationError("markov backend needs a model file path")
        model = markov_model_from_dict(json.loads(Path(path).read_text()))
        return DecisionBackendDescriptor(
            "markov", {"model": model, "seed": seed or default_seed}
        )
    if kind == "scripted":
        if not rest:
            raise ValidationError("scripted backend needs a script file path")
        return DecisionBackendDescriptor("scripted", {"table": Path(rest).read_text()})
    if kind == "remote":
        if not rest:
            raise ValidationError("remote backend needs a URL")
        return DecisionBackendDescriptor("remote", {"url": rest})
    raise ValidationError(f"unknown decision backend {text!r}")


def parse_vg(text: str, default_seed: int = 0) -> GeneratorDescriptor:
    """Generator descriptor grammar.

    ``identity`` | ``passthrough`` | ``noise:SIGMA[:SEED]`` | ``remote:URL``.
    """
    kind, _, rest = text.partition(":")
    if kind == "identity":
        return GeneratorDescriptor("identity")
    if kind == "passthrough":
        return GeneratorDescriptor("passthrough")
    if kind == "noise":
        fields = rest.split(":")
        try:
            sigma = float(fields[0])
        except (ValueError, IndexError) as exc:
            raise ValidationError(f"bad noise amplitude in {text!r}") from exc
        seed = int(fields[1]) if len(fields) > 1 else default_seed
        return GeneratorDescriptor("noise", {"sigma": sigma, "seed": seed})
    if kind == "remote":
        if not rest:
            raise ValidationError("remote generator needs a URL")
        return GeneratorDescriptor("remote", {"url": rest})
    raise ValidationError(f"unknown generator {text!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_build_dataset(args: argparse.Namespace) -> int:
    schema = read_schema(args.schema)
    sequences = read_sequences(args.annotations, schema)
    try:
        horizons = [float(h) for h in args.horizons.split(",") if h]
    except ValueError as exc:
        raise ValidationError(f"bad horizon list {args.horizons!r}") from exc
    clips = []
    for seq in sequences:
        clips.extend(
            build_clips(seq, horizons, sample_fps=args.fps, stride=args.stride)
        )
    spec = SplitSpec.parse(args.split, seed=args.seed, unit=args.split_unit)
    train, test = split_clips(clips, spec)
    clips = train + test
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(clips, out / "clips.jsonl")
    for horizon in horizons:
        count = sum(1 for c in clips if c.horizon == horizon)
        print(f"horizon {horizon:g}s: {count} clips")
    for split in ("train", "test"):
        print(f"{split}: {sum(1 for c in clips if c.split == split)} clips")
    print(f"wrote {out / 'clips.jsonl'}")
    return 0


_RUN_KEYS = (
    "schema",
    "clips",
    "temporal_scale",
    "incremental_scale",
    "dm",
    "vg",
    "policy",
    "seed",
    "workers",
    "out",
    "save_images",
    "retries",
)
_RUN_REQUIRED = ("schema", "clips", "temporal_scale", "incremental_scale", "dm", "vg", "out")


def _merged_run_config(args: argparse.Namespace) -> dict:
    merged: dict = {
        "policy": EVERY_STEP,
        "seed": 0,
        "workers": None,
        "save_images": False,
        "retries": 1,
    }
    if args.config is not None:
        loaded = json.loads(Path(args.config).read_text())
        if not isinstance(loaded, dict):
            raise ValidationError("run config must be a JSON object")
        unknown = sorted(set(loaded) - set(_RUN_KEYS))
        if unknown:
            raise ValidationError(f"unknown run config keys: {', '.join(unknown)}")
        merged.update(loaded)
    for key in _RUN_KEYS:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            merged[key] = value
    missing = [key for key in _RUN_REQUIRED if merged.get(key) in (None, "")]
    if missing:
        raise ValidationError(f"run config is missing: {', '.join(missing)}")
    return merged


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _merged_run_config(args)
    if cfg["policy"] not in GATE_POLICIES:
        raise ValidationError(
            f"unknown gating policy {cfg['policy']!r}, expected one of "
            f"{', '.join(GATE_POLICIES)}"
        )
    schema = read_schema(cfg["schema"])
    clips = read_manifest(cfg["clips"], schema)
    seed = int(cfg["seed"])
    dm = parse_dm(str(cfg["dm"]), default_seed=seed)
    vg = parse_vg(str(cfg["vg"]), default_seed=seed)
    settings = RunSettings(
        incremental_scale=float(cfg["incremental_scale"]),
        temporal_scale=float(cfg["temporal_scale"]),
        dm=dm,
        vg=vg,
        policy=cfg["policy"],
        retries=int(cfg["retries"]),
        workers=cfg["workers"] if cfg["workers"] is None else int(cfg["workers"]),
    )
    urls = {
        desc.params["url"]
        for desc in (dm, vg)
        if desc.kind == "remote"
    }
    if len(urls) > 1:
        raise ValidationError("dm and vg must target the same remote endpoint")
    client = None
    if urls:
        from .service import ProtocolClient

        client = ProtocolClient(urls.pop())
    started = datetime.now(timezone.utc).isoformat()
    try:
        result = evaluate_clips(schema, clips, settings, client=client)
    finally:
        if client is not None:
            client.close()
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    image_dir = out / "images" if cfg["save_images"] else None
    write_trajectories(result, out / "trajectories.jsonl", image_dir=image_dir)
    write_scores(result, out / "scores.csv", level_names=schema.level_names)
    sidecar = {
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "config": {k: cfg[k] for k in _RUN_KEYS if k not in ("workers",)},
    }
    (out / "run_meta.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(
        f"clips={len(result.outcomes)} aggregate={result.aggregate_objective:.4f}"
    )
    return 0


def _read_label_rows(path: str, width: int) -> list[tuple[str, ...]]:
    rows: list[tuple[str, ...]] = []
    with open(path) as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = tuple(part.strip() for part in line.split(","))
            if len(parts) != width:
                raise ParseError(
                    f"{path}: expected {width} labels, got {len(parts)}", line=n
                )
            rows.append(parts)
    return rows


def _cmd_eval(args: argparse.Namespace) -> int:
    levels = [name for name in args.levels.split(",") if name]
    if not levels:
        raise ValidationError("need at least one level name")
    pred = _read_label_rows(args.pred, len(levels))
    truth = _read_label_rows(args.truth, len(levels))
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for pos, name in enumerate(levels):
        report = state_metrics([r[pos] for r in pred], [r[pos] for r in truth])
        print(
            f"{name}: accuracy={report.accuracy:.2f} "
            f"macro_f1={report.macro.f1:.2f} macro_jaccard={report.macro.jaccard:.2f}"
        )
        if out is not None:
            write_report(report_rows(report), out / f"state_metrics_{name}.csv")
    joint = joint_state_metrics(
        [StateVector(r, "") for r in pred], [StateVector(r, "") for r in truth]
    )
    print(
        f"joint: accuracy={joint.accuracy:.2f} "
        f"macro_f1={joint.macro.f1:.2f} macro_jaccard={joint.macro.jaccard:.2f}"
    )
    if out is not None:
        write_report(report_rows(joint), out / "joint_metrics.csv")
        print(f"wrote reports to {out}")
    return 0


def _cmd_augment(args: argparse.Namespace) -> int:
    schema = read_schema(args.schema)
    sequences = read_sequences(args.annotations, schema)
    if args.alpha == AUTO:
        alpha: int | str = AUTO
    else:
        try:
            alpha = int(args.alpha)
        except ValueError as exc:
            raise ValidationError("alpha must be an integer or auto") from exc
    cfg = AugmentConfig(
        alpha=alpha,
        delta_tau_max=args.delta_tau,
        eps_img=args.eps_img,
        seed=args.seed,
    )
    scale = args.incremental_scale
    samples = []
    for seq in sequences:
        duration = (len(seq.frames) - 1) / seq.fps
        steps = int(duration / scale + 1e-9)
        if steps < 2:
            logger.warning("sequence %s too short to augment", seq.sequence_id)
            continue
        grid = make_time_grid(steps * scale, scale, scale)
        resampled = resample_to_grid(seq, grid)
        idx = find_transitions(resampled, grid)
        if idx.count == 0:
            logger.warning("sequence %s has no transitions", seq.sequence_id)
            continue
        new = augment_transitions(resampled, idx, cfg, schema)
        samples.extend(new)
        print(
            f"{seq.sequence_id}: transitions={idx.count} steps={idx.n_steps} "
            f"samples={len(new)}"
        )
    write_augmented(samples, args.out, image_dir=args.image_dir)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _read_numeric_rows(path: str) -> list[list[float]]:
    rows: list[list[float]] = []
    with open(path) as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [part.strip() for part in line.split(",")]
            try:
                rows.append([float(part) for part in parts])
            except ValueError:
                if rows or n > 1:
                    raise ParseError(f"{path}: non-numeric row", line=n)
                continue
    if not rows:
        raise ValidationError(f"{path} holds no numeric rows")
    return rows


def _cmd_analyze_product_bound(args: argparse.Namespace) -> int:
    rows = _read_numeric_rows(args.input)
    gaps = None
    if args.mc:
        gaps = [float(part) for part in args.mc.split(",") if part]
        if len(gaps) != len(rows):
            raise ValidationError(
                f"--mc holds {len(gaps)} values for {len(rows)} rows"
            )
    for pos, row in enumerate(rows):
        pi = product_bound(MarginalAccuracies.of(*row))
        if gaps is None:
            print(f"{pi:.1f}")
        else:
            print(f"{pi:.1f} {mc_gap(gaps[pos], pi):+.1f}")
    return 0


def _cmd_analyze_fid_accuracy(args: argparse.Namespace) -> int:
    rows = _read_numeric_rows(args.input)
    points = []
    for row in rows:
        if len(row) != 2:
            raise ValidationError("fid-accuracy rows must be accuracy,fid pairs")
        points.append((row[0], row[1]))
    fit = fit_accuracy_fid(points)
    print(
        f"fid = a - b*accuracy: a={fit.intercept:.6g} b={fit.slope:.6g} "
        f"r={fit.pearson_r:.6g} t_stat={fit.t_stat:.6g} n={fit.n}"
    )
    if args.out:
        write_fit_series(points, fit, args.out)
        print(f"wrote {args.out}")
    return 0


def _cmd_serve_mock(args: argparse.Namespace) -> int:
    from .service import MockBacking, serve_mock

    host, _, port_text = args.bind.rpartition(":")
    if not host or not port_text.isdigit():
        raise ValidationError(f"bind address {args.bind!r} is not HOST:PORT")
    schema = read_schema(args.schema)
    clips = {}
    if args.clips:
        clips = {c.clip_id: c for c in read_manifest(args.clips, schema)}
    backing = MockBacking(
        schema=schema,
        decision=parse_dm(args.dm, default_seed=args.seed),
        generator=parse_vg(args.vg, default_seed=args.seed),
        clips=clips,
        incremental_scale=args.incremental_scale,
        retries=args.retries,
    )
    handle = serve_mock(backing, host=host, port=int(port_text))
    print(f"serving on {handle.base_url}")
    try:
        handle.join()
    except KeyboardInterrupt:
        handle.stop()
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mstp",
        description="Multi-scale temporal prediction: dataset, loop, metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="cut annotated sequences into clips")
    p.add_argument("--annotations", required=True, help="sequence manifest (JSONL)")
    p.add_argument("--schema", required=True, help="level schema (JSON)")
    p.add_argument("--horizons", default="1,5,30,60", help="comma list of seconds")
    p.add_argument("--fps", type=float, default=1.0, help="sampling rate inside clips")
    p.add_argument("--stride", type=float, default=1.0, help="start offset step, seconds")
    p.add_argument("--split", default="10:1", help="train:test ratio")
    p.add_argument(
        "--split-unit",
        default="clip",
        choices=("clip", "source-sequence"),
        help="unit of split assignment",
    )
    p.add_argument("--seed", type=int, default=0, help="split shuffle seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_build_dataset)

    p = sub.add_parser("run", help="run the closed loop over a clip manifest")
    p.add_argument("--config", help="JSON config mirroring the flags below")
    p.add_argument("--schema", help="level schema (JSON)")
    p.add_argument("--clips", help="clip manifest (JSONL)")
    p.add_argument("--temporal-scale", type=float, dest="temporal_scale",
                   help="scoring interval, seconds")
    p.add_argument("--incremental-scale", type=float, dest="incremental_scale",
                   help="loop step, seconds")
    p.add_argument("--dm", help="decision backend descriptor")
    p.add_argument("--vg", help="generator descriptor")
    p.add_argument("--policy", choices=GATE_POLICIES, help="gating policy")
    p.add_argument("--seed", type=int, help="default backend seed")
    p.add_argument("--workers", type=int, help="parallel clip evaluations")
    p.add_argument("--retries", type=int, help="cascade retries per level")
    p.add_argument("--save-images", action="store_true", dest="save_images",
                   help="write per-step PNGs next to the trajectory dump")
    p.add_argument("--out", help="output directory")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("eval", help="score label files against ground truth")
    p.add_argument("--pred", required=True, help="predicted labels, CSV rows")
    p.add_argument("--truth", required=True, help="true labels, CSV rows")
    p.add_argument("--levels", required=True, help="comma list of level names")
    p.add_argument("--out", help="directory for metric report CSVs")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("augment", help="oversample transition steps")
    p.add_argument("--annotations", required=True, help="sequence manifest (JSONL)")
    p.add_argument("--schema", required=True, help="level schema (JSON)")
    p.add_argument("--alpha", default=AUTO, help="variants per transition, or auto")
    p.add_argument("--delta-tau", type=int, default=1, dest="delta_tau",
                   help="max anchor shift, steps")
    p.add_argument("--eps-img", type=float, default=4.0, dest="eps_img",
                   help="max uniform pixel noise")
    p.add_argument("--seed", type=int, default=0, help="variant seed")
    p.add_argument("--incremental-scale", type=float, default=1.0,
                   dest="incremental_scale", help="step size, seconds")
    p.add_argument("--image-dir", dest="image_dir", help="directory for variant PNGs")
    p.add_argument("--out", required=True, help="output manifest (JSONL)")
    p.set_defaults(handler=_cmd_augment)

    p = sub.add_parser("analyze", help="reduce result tables")
    asub = p.add_subparsers(dest="analysis", required=True)

    q = asub.add_parser("product-bound", help="independence product of marginals")
    q.add_argument("--in", dest="input", required=True,
                   help="rows of comma-separated accuracies, percent")
    q.add_argument("--mc", help="measured joint accuracies, one per row")
    q.set_defaults(handler=_cmd_analyze_product_bound)

    q = asub.add_parser("fid-accuracy", help="fit fid = a - b*accuracy")
    q.add_argument("--in", dest="input", required=True, help="accuracy,fid rows")
    q.add_argument("--out", help="plot-data CSV of observed and fitted values")
    q.set_defaults(handler=_cmd_analyze_fid_accuracy)

    p = sub.add_parser("serve-mock", help="serve the oracle-backed mock backend")
    p.add_argument("--bind", default="127.0.0.1:8080", help="HOST:PORT")
    p.add_argument("--schema", required=True, help="level schema (JSON)")
    p.add_argument("--clips", help="clip manifest the oracles read truth from")
    p.add_argument("--dm", default="oracle:gt", help="decision backend descriptor")
    p.add_argument("--vg", default="passthrough", help="generator descriptor")
    p.add_argument("--incremental-scale", type=float, default=1.0,
                   dest="incremental_scale", help="step size, seconds")
    p.add_argument("--seed", type=int, default=0, help="default backend seed")
    p.add_argument("--retries", type=int, default=1, help="cascade retries")
    p.set_defaults(handler=_cmd_serve_mock)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except MstpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
