"""Command-line entry point: ``liftdepth {gen,train,eval,infer,gradcheck,dump}``.

Configuration is a flat ``key = value`` file; ``--preset`` picks a base and
``--set key=value`` overrides individual keys.  Precedence, lowest first:
defaults, preset, config file, ``LIFTDEPTH_SEED``, ``--set``.

Exit codes: 0 success, 1 failed check, 2 usage or configuration error,
3 data or checkpoint error.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import numcore as nc
from .binhead import LossParams
from .errors import ConfigError
from .metrics import MetricReport, aggregate, compute_metrics, error_map
from .model import (Batch, CheckpointError, LiftDepthNet, ModelConfig, batch_loss, build_model, fit,
                    load_checkpoint, save_checkpoint)
from .numcore import lftd
from .scenes import (PFMFormatError, SceneSample, SceneSpec, generate_scene, read_ppm, read_sample,
                     sample_seed, write_pfm, write_ppm, write_sample)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
SEED_ENV = "LIFTDEPTH_SEED"
DUMP_KINDS = ("frame", "dgr", "er-alpha", "depth")
SCALE_NAMES = ("1-4", "1-8", "1-16", "1-32")


class DataError(RuntimeError):
    """Missing or malformed dataset, checkpoint or input file (exit code 3)."""


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # model
    height: int = 64
    width: int = 64
    stem_channels: int = 16
    enc_channels: tuple = (32, 64, 128, 256)
    dec_width: int = 128
    frame_n: int = 32
    frame_c: int = 8
    n_bins: int = 0
    d_min: float = 0.5
    d_max: float = 11.0
    use_er: bool = True
    # scenes
    num_samples: int = 200
    objects_min: int = 1
    objects_max: int = 3
    depth_near: float = 1.0
    depth_far: float = 10.0
    ambient: float = 0.0
    albedo_min: float = 0.2
    grid: int = 4
    # optimization
    epochs: int = 20
    batch_size: int = 4
    lr_start: float = 2e-3
    lr_end: float = 2e-4
    flip: bool = True
    silog_alpha: float = 10.0
    silog_lambda: float = 0.85
    # evaluation and IO
    data_dir: str = "data/train"
    out_dir: str = "runs/desk"
    checkpoint: str = ""      # "" means <out_dir>/checkpoint; "init" means fresh initialization
    image: str = ""           # PPM input for infer/dump; "" means sample `sample_index` of data_dir
    sample_index: int = 0
    eval_cap: float = 0.0     # 0 disables the depth cap
    error_maps: bool = False
    workers: int = 1
    grad_eps: float = 1e-5
    grad_tol: float = 1e-3
    grad_jitter: float = 0.05

    def model_config(self) -> ModelConfig:
        return ModelConfig(height=self.height, width=self.width, stem_channels=self.stem_channels,
                           enc_channels=tuple(self.enc_channels), dec_width=self.dec_width,
                           frame_n=self.frame_n, frame_c=self.frame_c, n_bins=self.n_bins,
                           d_min=self.d_min, d_max=self.d_max, use_er=self.use_er,
                           seed=self.seed).validate()

    def scene_spec(self, seed: int) -> SceneSpec:
        try:
            return SceneSpec(seed=seed, height=self.height, width=self.width,
                             objects=(self.objects_min, self.objects_max),
                             depth_range=(self.depth_near, self.depth_far), ambient=self.ambient,
                             albedo_min=self.albedo_min, grid=self.grid)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / "checkpoint"

    def resolved(self) -> "RunConfig":
        paths = {k: str(Path(getattr(self, k)).resolve()) for k in ("data_dir", "out_dir")}
        for k in ("checkpoint", "image"):
            v = getattr(self, k)
            if v and v != "init":
                paths[k] = str(Path(v).resolve())
        return replace(self, **paths)

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"


PRESETS: dict[str, dict[str, object]] = {
    "desk": {},
    "overfit": {"num_samples": 4, "epochs": 200, "batch_size": 4,
                "data_dir": "data/overfit", "out_dir": "runs/overfit"},
    "tiny": {"height": 32, "width": 32, "stem_channels": 4, "enc_channels": (4, 4, 8, 8),
             "dec_width": 8, "frame_n": 8, "frame_c": 4, "num_samples": 4, "epochs": 1,
             "data_dir": "data/tiny", "out_dir": "runs/tiny"},
}

_FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}
_TRUE, _FALSE = {"1", "true", "yes", "on"}, {"0", "false", "no", "off"}


def _convert(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind, raw = _FIELD_TYPES[key], raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(raw)
            return low in _TRUE
        if kind is tuple:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> dict[str, object]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _convert(key, value)
    return out


def load_config(path=None, preset: str | None = None, overrides=(), env=None) -> RunConfig:
    env = os.environ if env is None else env
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    values: dict[str, object] = dict(PRESETS.get(preset or "desk", {}))
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        values.update(parse_config_text(text))
    if env.get(SEED_ENV):
        values["seed"] = _convert("seed", env[SEED_ENV])
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        values[key.strip()] = _convert(key.strip(), value)
    return RunConfig(**values).resolved()


# ---------------------------------------------------------------- dataset helpers

def _gen_one(args):
    cfg, directory, index = args
    write_sample(directory, index, generate_scene(cfg.scene_spec(sample_seed(cfg.seed, index))))


def load_dataset(directory) -> list[SceneSample]:
    d = Path(directory)
    manifest = d / "manifest.txt"
    if not manifest.is_file():
        raise FileNotFoundError(f"no dataset manifest at {manifest}")
    samples = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        index = int(line.split()[0])
        try:
            samples.append(read_sample(d, index))
        except (OSError, ValueError) as exc:
            raise DataError(f"sample {index:04d} in {d}: {exc}") from None
    return samples


def _check_sizes(samples: list[SceneSample], cfg: RunConfig) -> None:
    for i, s in enumerate(samples):
        if s.depth.shape != (cfg.height, cfg.width):
            raise DataError(f"sample {i} is {s.depth.shape[0]}x{s.depth.shape[1]}, "
                            f"model expects {cfg.height}x{cfg.width}")


def _load_model(cfg: RunConfig) -> LiftDepthNet:
    model = build_model(cfg.model_config())
    if cfg.checkpoint != "init":
        try:
            load_checkpoint(model.params, cfg.checkpoint_path())
        except CheckpointError as exc:
            raise DataError(str(exc)) from None
    return model


def _input_image(cfg: RunConfig) -> np.ndarray:
    if cfg.image:
        try:
            img = read_ppm(cfg.image)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read input image: {exc}") from None
    else:
        try:
            img = read_sample(cfg.data_dir, cfg.sample_index).image
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read sample {cfg.sample_index} of {cfg.data_dir}: {exc}") from None
    if img.shape != (3, cfg.height, cfg.width):
        raise DataError(f"input image is {img.shape[1]}x{img.shape[2]}, "
                        f"model expects {cfg.height}x{cfg.width}")
    return img


def _out(cfg: RunConfig, *parts: str) -> Path:
    d = Path(cfg.out_dir).joinpath(*parts)
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------- commands

def cmd_gen(cfg: RunConfig) -> int:
    if cfg.num_samples < 0:
        raise ConfigError("num_samples must be nonnegative")
    cfg.scene_spec(cfg.seed)  # validate before touching the filesystem
    d = Path(cfg.data_dir)
    try:
        d.mkdir(parents=True, exist_ok=True)
        jobs = [(cfg, d, i) for i in range(cfg.num_samples)]
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(cfg.workers) as pool:
                list(pool.map(_gen_one, jobs))
        else:
            for job in jobs:
                _gen_one(job)
        (d / "manifest.txt").write_text(
            "".join(f"{i:04d} {sample_seed(cfg.seed, i)}\n" for i in range(cfg.num_samples)))
    except OSError as exc:
        print(f"error: cannot write dataset to {d}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {cfg.num_samples} samples to {d}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    try:
        samples = load_dataset(cfg.data_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _check_sizes(samples, cfg)
    model = build_model(cfg.model_config())
    lp = LossParams(cfg.silog_alpha, cfg.silog_lambda)
    out = _out(cfg)
    with open(out / "train_log.txt", "w") as log:
        log.write("step loss lr\n")

        def on_step(entry):
            log.write(entry.line() + "\n")

        if cfg.epochs > 0 and samples:
            fit(model, samples, cfg.epochs, cfg.batch_size, cfg.lr_start, cfg.lr_end,
                seed=cfg.seed, flip=cfg.flip, on_step=on_step, lp=lp)
    save_checkpoint(model.params, cfg.checkpoint_path())
    (out / "config.txt").write_text(cfg.to_text())
    print(f"checkpoint written to {cfg.checkpoint_path()}")
    return EXIT_OK


Predictor = Callable[[SceneSample], np.ndarray]


def cmd_eval(cfg: RunConfig, predictor: Predictor | None = None) -> int:
    """Per-sample and aggregate reports; ``predictor`` replaces the model (test hook)."""
    try:
        samples = load_dataset(cfg.data_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not samples:
        print("error: dataset is empty", file=sys.stderr)
        return EXIT_USAGE
    if predictor is None:
        _check_sizes(samples, cfg)
        model = _load_model(cfg)
        predictor = lambda s: model.predict(s.image)[0]  # noqa: E731

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            preds = list(pool.map(predictor, samples))
    else:
        preds = [predictor(s) for s in samples]

    cap = cfg.eval_cap if cfg.eval_cap > 0 else None
    out = _out(cfg, "eval")
    reports = []
    for i, (s, pred) in enumerate(zip(samples, preds)):
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != s.depth.shape:
            raise DataError(f"prediction {pred.shape} does not match ground truth {s.depth.shape}")
        r = compute_metrics(pred, s.depth, s.mask, cap=cap)
        reports.append(r)
        (out / f"{i:04d}.txt").write_text(r.to_text())
        write_pfm(out / f"{i:04d}.pred.pfm", pred)
        if cfg.error_maps:
            write_ppm(out / f"{i:04d}.err.ppm", error_map(pred, s.depth, s.mask))
    summary = aggregate(reports)
    (out / "summary.txt").write_text(summary.to_text())
    rows = [f"{i:04d},{r.to_csv_row()}" for i, r in enumerate(reports)]
    (out / "metrics.csv").write_text("\n".join(["index," + MetricReport.csv_header(), *rows,
                                                "mean," + summary.to_csv_row()]) + "\n")
    print(summary.to_text(), end="")
    return EXIT_OK


def cmd_infer(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    depth = model.predict(_input_image(cfg))[0]
    out = _out(cfg, "infer")
    stem = Path(cfg.image).stem if cfg.image else f"{cfg.sample_index:04d}"
    write_pfm(out / f"{stem}.pfm", depth)
    span = cfg.d_max - cfg.d_min
    write_ppm(out / f"{stem}.ppm", (cfg.d_max - depth) / span)
    print(f"depth written to {out / (stem + '.pfm')}")
    return EXIT_OK


def _gradcheck_batch(cfg: RunConfig) -> Batch:
    return Batch.from_samples([generate_scene(cfg.scene_spec(sample_seed(cfg.seed, 0)))])


def cmd_gradcheck(cfg: RunConfig, model=None, grad_hook=None) -> int:
    """Central-difference check of the full SILog loss over every parameter.

    ``model`` substitutes any object with ``params`` and ``forward`` (test
    hook); ``grad_hook`` may corrupt analytic gradients (negative control).

    Parameters are first perturbed by seeded Gaussian noise of scale
    ``grad_jitter`` and restored afterwards: zero-initialized biases put
    ReLU inputs exactly on the kink wherever a feature map is zero, and
    central differences are meaningless there.
    """
    model = build_model(cfg.model_config()) if model is None else model
    batch = _gradcheck_batch(cfg)
    saved = model.params.state()
    rng = np.random.default_rng(cfg.seed)
    for _, p in model.params.items():
        p.data = p.data + cfg.grad_jitter * rng.standard_normal(p.shape)
    try:
        report = nc.finite_diff_check(lambda: batch_loss(model, batch), model.params,
                                      eps=cfg.grad_eps, tol=cfg.grad_tol, grad_hook=grad_hook)
    finally:
        model.params.load_state(saved)
    n = sum(model.params[e.name].size for e in report.entries)
    print(f"checked {len(report.entries)} parameters ({n} values)")
    print(f"max relative error {report.max_rel_error:.3e} (tolerance {cfg.grad_tol:.1e})")
    if not report.deterministic:
        print("FAIL: loss is not deterministic")
        return EXIT_FAIL
    if report.passed:
        print("PASS")
        return EXIT_OK
    print("FAIL: worst parameters")
    for e in report.worst(5):
        print(f"  {e.name} rel_error {e.max_rel_error:.3e} at {e.worst_index}")
    return EXIT_FAIL


def cmd_dump(cfg: RunConfig, what: str) -> int:
    if what not in DUMP_KINDS:
        print(f"error: unknown dump target {what!r}; choose from {', '.join(DUMP_KINDS)}", file=sys.stderr)
        return EXIT_USAGE
    model = _load_model(cfg)
    out = _out(cfg, "dump")
    if what == "frame":
        lftd.write(out / "frame.lftd", model.frame.vectors.data)
        print(f"wrote {out / 'frame.lftd'}")
        return EXIT_OK
    with nc.no_grad():
        trace = model.forward(_input_image(cfg))
    written = []
    if what == "dgr":
        for name, t in zip(SCALE_NAMES, trace.dgr):
            written.append((f"dgr_{name}.lftd", t.data[0]))
    elif what == "er-alpha":
        if not trace.er:
            print("error: model has edge lifting disabled", file=sys.stderr)
            return EXIT_USAGE
        for name, coeffs in zip(SCALE_NAMES[2::-1], trace.er):
            written.append((f"er_alpha_{name}.lftd", coeffs.alpha1.data[0, 0]))
    else:
        written.append(("depth.lftd", trace.depth.data[0]))
    for fname, arr in written:
        lftd.write(out / fname, arr)
        print(f"wrote {out / fname}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liftdepth", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["gen", "train", "eval", "infer", "gradcheck", "dump"])
    p.add_argument("what", nargs="?", help="dump target: " + ", ".join(DUMP_KINDS))
    p.add_argument("--config", "-c", help="flat key = value configuration file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--workers", type=int, help="parallel workers for gen and eval")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration")
    return p


def main(argv=None, *, predictor: Predictor | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    preset = args.preset or ("tiny" if args.command == "gradcheck" else None)
    try:
        overrides = list(args.overrides)
        if args.workers is not None:
            overrides.append(f"workers={args.workers}")
        cfg = load_config(args.config, preset, overrides)
        if args.print_config:
            print(cfg.to_text(), end="")
        if args.command == "dump":
            if args.what is None:
                raise ConfigError("dump needs a target: " + ", ".join(DUMP_KINDS))
            return cmd_dump(cfg, args.what)
        if args.what is not None:
            raise ConfigError(f"unexpected argument {args.what!r}")
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, predictor)
        if args.command == "infer":
            return cmd_infer(cfg)
        return cmd_gradcheck(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, PFMFormatError, nc.ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main_entry() -> None:
    sys.exit(main())
