"""``teg`` command line.

Every command reads an experiment config (``--config``, JSON), applies the
``--seed``/``--out``/``--preset`` overrides and writes its artifacts under
the run directory.  Result files are deterministic functions of the config
and carry its hash.  Errors are reported as one JSON line on stderr::

    {"error": "config", "message": "..."}

with exit status 2 for usage errors, 3 for config errors and 1 otherwise.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import Benchmark
from .boundary import BoundaryAnnotation, collect_windows, detect, f1_score, train_boundary_head
from .config import ExperimentConfig, load_config
from .data import Dataset, generate_dataset, load_dataset, save_dataset
from .encoder import load_checkpoint
from .errors import CheckpointError, ConfigError, TegError
from .gradcheck import gradient_check
from .losses import PRESETS
from .probes import run_probe, similarity_matrix, span_majority_events, split_by_video, uniform_spans
from .sampling import SamplingMode
from .train import Trainer

log = logging.getLogger("teg")

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3

ALPHAS = tuple(round(0.1 * k, 1) for k in range(11))
NM_GRID = tuple((n, m) for n in (1, 2, 4) for m in (1, 2, 4, 8))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- output helpers ----------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _write_json(path: Path, obj) -> None:
    path.write_text(_dumps(obj) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, rows) -> None:
    path.write_text("".join(_dumps(r) + "\n" for r in rows), encoding="utf-8")


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    path.write_text(buf.getvalue(), encoding="utf-8")


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _parse_grid(text: str) -> list[tuple[int, int]]:
    cells = []
    for cell in text.split(","):
        try:
            n, m = cell.lower().split("x")
            cells.append((int(n), int(m)))
        except ValueError:
            raise UsageError(f"grid cells look like 2x4, got {cell!r}") from None
    return cells


# -- context -----------------------------------------------------------------


class Run:
    """Resolved config, run directory and lazily built inputs of one command."""

    def __init__(self, args):
        cfg = load_config(args.config).with_overrides(args.seed, args.out, args.preset)
        cfg.validate()
        self.cfg: ExperimentConfig = cfg
        self.hash = cfg.hash()
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.args = args
        self._dataset = None

    @property
    def dataset(self) -> Dataset:
        if self._dataset is None:
            data = getattr(self.args, "data", None)
            saved = self.out / "dataset.npz"
            gen = self.benchmark_cfg.generator
            if data:
                self._dataset = load_dataset(data)
            elif saved.exists() and (ds := load_dataset(saved)).config == gen:
                self._dataset = ds
            else:
                self._dataset = generate_dataset(gen)
        return self._dataset

    @property
    def benchmark_cfg(self):
        return self.cfg.benchmark()

    def checkpoint_path(self) -> Path:
        ckpt = getattr(self.args, "checkpoint", None)
        return Path(ckpt) if ckpt else self.out / "checkpoint.npz"

    def load_encoder(self):
        path = self.checkpoint_path()
        if not path.exists():
            raise CheckpointError(f"checkpoint {path} not found; run `teg pretrain` first")
        encoder, _, _ = load_checkpoint(path)
        return encoder

    def provenance(self, **extra) -> dict:
        return {"config_hash": self.hash, "version": __version__, **extra}


# -- commands ----------------------------------------------------------------


def cmd_gen_data(run: Run) -> int:
    ds = generate_dataset(run.benchmark_cfg.generator)
    path = run.out / "dataset.npz"
    save_dataset(ds, path)
    _write_json(run.out / "gen-data.json", run.provenance(
        command="gen-data", dataset=str(path.name), num_videos=len(ds),
        frames_per_video=ds.config.frames_per_video, feature_dim=ds.config.feature_dim))
    print(_dumps({"dataset": str(path), "num_videos": len(ds)}))
    return 0


def cmd_pretrain(run: Run) -> int:
    args = run.args
    bench = run.benchmark_cfg
    if args.resume:
        trainer = Trainer.resume(args.resume, run.dataset)
        if trainer.cfg != bench.train:
            raise ConfigError(f"{args.resume} was trained with a different train config")
    else:
        enc_cfg = Benchmark(bench).encoder_config()
        trainer = Trainer(run.dataset, bench.train, encoder_cfg=enc_cfg)
    metrics = trainer.run(until_step=args.until_step)
    ckpt = run.checkpoint_path()
    trainer.save(ckpt, extra={"config_hash": run.hash})
    _write_jsonl(run.out / "metrics.jsonl",
                 [{**row, "config_hash": run.hash} for row in metrics])
    summary = run.provenance(command="pretrain", checkpoint=ckpt.name,
                             checkpoint_id=trainer.encoder.checksum(), step=trainer.step,
                             total_steps=trainer.total_steps, alpha=bench.train.loss.alpha,
                             final_loss=metrics[-1]["L"] if metrics else None)
    _write_json(run.out / "pretrain.json", summary)
    print(_dumps({"checkpoint": str(ckpt), "step": trainer.step,
                  "checkpoint_id": summary["checkpoint_id"]}))
    return 0


def cmd_probe(run: Run) -> int:
    encoder = run.load_encoder()
    probe_cfg = dataclasses.replace(run.benchmark_cfg.probe, task=run.args.task)
    result = run_probe(encoder, run.dataset, probe_cfg)
    report = run.provenance(task=run.args.task, checkpoint_id=encoder.checksum(),
                            accuracy=result.accuracy, num_classes=result.num_classes,
                            seed=run.cfg.seed)
    _write_json(run.out / f"probe-{run.args.task}.json", report)
    print(_dumps({"task": run.args.task, "accuracy": result.accuracy}))
    return 0


def cmd_detect(run: Run) -> int:
    encoder = run.load_encoder()
    bench = run.benchmark_cfg
    ds = run.dataset
    train_mask, _ = split_by_video(np.arange(len(ds)), bench.boundary.train_fraction,
                                   [run.cfg.seed, 5])
    X, y = collect_windows(encoder, [ds[i] for i in np.flatnonzero(train_mask)],
                           bench.window, bench.boundary.pairing)
    head = train_boundary_head(X, y, epochs=bench.boundary.epochs, lr=bench.boundary.lr,
                               batch=bench.boundary.batch, seed=run.cfg.seed,
                               pairing=bench.boundary.pairing)
    rows = []
    for i in np.flatnonzero(~train_mask):
        dets = detect(head, encoder, ds[int(i)], bench.window)
        rows.append({"video_id": int(i), "timestamps": dets.timestamps,
                     "config_hash": run.hash})
    _write_jsonl(run.out / "detections.jsonl", rows)
    print(_dumps({"detections": str(run.out / "detections.jsonl"), "videos": len(rows)}))
    return 0


def _read_jsonl(path: Path) -> list[dict]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return [json.loads(line) for line in lines if line.strip()]
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON line: {exc.msg}") from exc


def cmd_eval_f1(run: Run) -> int:
    args = run.args
    det_path = Path(args.detections) if args.detections else run.out / "detections.jsonl"
    detections = _read_jsonl(det_path)
    annotations = {}
    if args.annotations:
        for row in _read_jsonl(Path(args.annotations)):
            annotations[int(row["video_id"])] = BoundaryAnnotation(
                [list(s) for s in row["sets"]], float(row["video_length_seconds"]))
    rel_dis = run.cfg.window.rel_dis
    scores = []
    for row in detections:
        vid = int(row["video_id"])
        ann = annotations.get(vid)
        if ann is None:
            video = run.dataset[vid]
            ann = BoundaryAnnotation([list(video.boundaries)], video.duration)
        s = f1_score(row["timestamps"], ann, rel_dis)
        scores.append({"video_id": vid, "f1": s["f1"], "precision": s["precision"],
                       "recall": s["recall"], "num_detections": len(row["timestamps"]),
                       "config_hash": run.hash})
    _write_jsonl(run.out / "scores.jsonl", scores)
    mean = {k: float(np.mean([s[k] for s in scores])) if scores else float("nan")
            for k in ("f1", "precision", "recall")}
    _write_json(run.out / "eval-f1.json", run.provenance(command="eval-f1", rel_dis=rel_dis,
                                                         videos=len(scores), **mean))
    print(_dumps(mean))
    return 0


def cmd_simmat(run: Run) -> int:
    encoder = run.load_encoder()
    video = run.dataset[run.args.video]
    spans = uniform_spans(video.num_frames, 5)
    sim = similarity_matrix(encoder, video, spans)
    events = span_majority_events(video, spans)
    lines = [f"# config_hash={run.hash} video={run.args.video} "
             f"checkpoint_id={encoder.checksum()}",
             "clip,event," + ",".join(f"c{j}" for j in range(len(spans)))]
    for i, row in enumerate(sim):
        lines.append(f"c{i},{events[i]}," + ",".join(repr(float(v)) for v in row))
    path = run.out / f"simmat-{run.args.video}.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(_dumps({"simmat": str(path)}))
    return 0


def cmd_gradcheck(run: Run) -> int:
    result = gradient_check(num_coords=run.args.coords, seed=run.cfg.seed)
    passed = result["max_rel_error"] < 1e-4
    report = run.provenance(command="gradcheck", max_rel_error=result["max_rel_error"],
                            num_coords=len(result["coords"]), passed=passed)
    _write_json(run.out / "gradcheck.json", report)
    print(_dumps({"max_rel_error": result["max_rel_error"], "passed": passed}))
    return 0 if passed else EXIT_FAILURE


def _seeds(run: Run) -> list[int]:
    return _parse_ints(run.args.seeds) if run.args.seeds else [run.cfg.seed]


def cmd_ablate_alpha(run: Run) -> int:
    bench = Benchmark(run.benchmark_cfg)
    rows = bench.alpha_sweep(ALPHAS, _seeds(run))
    rows = [{**r, "config_hash": run.hash} for r in rows]
    _write_csv(run.out / "ablate-alpha.csv", rows,
               ["alpha", "seed", "event_acc", "sequence_acc", "config_hash"])
    print(_dumps({"rows": len(rows), "csv": str(run.out / "ablate-alpha.csv")}))
    return 0


def cmd_ablate_nm(run: Run) -> int:
    grid = _parse_grid(run.args.grid) if run.args.grid else list(NM_GRID)
    train = run.benchmark_cfg.train
    long_T, short_T = train.clip_lengths()
    for n, m in grid:
        if n < 1 or m < 1 or short_T % n or long_T % m:
            raise ConfigError(f"grid cell {n}x{m} does not divide clip lengths "
                              f"{short_T} (short) / {long_T} (long)")
    bench = Benchmark(run.benchmark_cfg)
    rows = [{**r, "config_hash": run.hash} for r in bench.nm_sweep(grid, _seeds(run))]
    _write_csv(run.out / "ablate-nm.csv", rows, ["n", "m", "seed", "event_acc", "config_hash"])
    print(_dumps({"rows": len(rows), "csv": str(run.out / "ablate-nm.csv")}))
    return 0


def cmd_ablate_sampling(run: Run) -> int:
    bench = Benchmark(run.benchmark_cfg)
    rows = [{**r, "config_hash": run.hash}
            for r in bench.sampling_sweep(_seeds(run), tuple(SamplingMode))]
    _write_csv(run.out / "ablate-sampling.csv", rows, ["mode", "seed", "event_acc", "config_hash"])
    print(_dumps({"rows": len(rows), "csv": str(run.out / "ablate-sampling.csv")}))
    return 0


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate and save the synthetic dataset"),
    "pretrain": (cmd_pretrain, "self-supervised pretraining; writes a checkpoint and metrics"),
    "probe": (cmd_probe, "linear probe on frozen features"),
    "detect": (cmd_detect, "train a boundary head and detect boundaries on held-out videos"),
    "eval-f1": (cmd_eval_f1, "score detections with the relative-distance F1"),
    "simmat": (cmd_simmat, "5x5 clip similarity matrix of one video"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the training gradients"),
    "ablate-alpha": (cmd_ablate_alpha, "sweep the loss weight alpha over 0.0..1.0"),
    "ablate-nm": (cmd_ablate_nm, "sweep the aggregation grid (n, m)"),
    "ablate-sampling": (cmd_ablate_sampling, "compare the four clip sampling modes"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", metavar="DIR", help="run directory (overrides the config)")
    common.add_argument("--preset", choices=sorted(PRESETS),
                        help="loss preset: teg-ps (alpha=0) or teg-fg (alpha=0.9)")
    common.add_argument("--data", metavar="PATH", help="dataset file (default: regenerate)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="teg", description="Dual-granularity contrastive video"
                     " pretraining on synthetic event videos.")
    parser.add_argument("--version", action="version", version=f"teg {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    parsers = {name: sub.add_parser(name, parents=[common], help=text)
               for name, (_, text) in COMMANDS.items()}

    p = parsers["pretrain"]
    p.add_argument("--checkpoint", metavar="PATH", help="where to write the checkpoint")
    p.add_argument("--resume", metavar="PATH", help="continue from a checkpoint")
    p.add_argument("--until-step", type=int, help="stop after this many total steps")
    for name in ("probe", "detect", "simmat"):
        parsers[name].add_argument("--checkpoint", metavar="PATH")
    parsers["probe"].add_argument("--task", choices=("event", "sequence"), default="event")
    parsers["simmat"].add_argument("--video", type=int, default=0)
    parsers["eval-f1"].add_argument("--detections", metavar="PATH")
    parsers["eval-f1"].add_argument("--annotations", metavar="PATH",
                                    help="JSON lines {video_id, sets, video_length_seconds}")
    parsers["gradcheck"].add_argument("--coords", type=int, default=50)
    for name in ("ablate-alpha", "ablate-nm", "ablate-sampling"):
        parsers[name].add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    parsers["ablate-nm"].add_argument("--grid", help="cells like 1x4,2x8")
    return parser


def _fail(kind: str, message: str, status: int) -> int:
    print(_dumps({"error": kind, "message": message}), file=sys.stderr)
    return status


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        run = Run(args)
        handler, _ = COMMANDS[args.command]
        return handler(run)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except TegError as exc:
        return _fail(exc.kind, str(exc), EXIT_FAILURE)
    except (IndexError, KeyError) as exc:
        return _fail("input", f"{type(exc).__name__}: {exc}", EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
