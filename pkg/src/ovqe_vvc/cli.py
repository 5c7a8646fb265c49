"""Command-line driver: ``ovqe {enhance,train,evaluate,bdrate}``.

Runs are described by an INI file with one section per concern::

    [sequence]            ; or [sequence NAME], repeatable
    path = raw.yuv
    width = 64
    height = 64
    bit_depth = 8
    frame_rate = 30
    frames = 16           ; optional cap

    [codec]
    kind = mock           ; or external
    qps = 32, 37, 42, 47
    encoder = vvencapp    ; external only, defaults to $OVQE_ENCODER
    decoder = vvdecapp    ; external only, defaults to $OVQE_DECODER

    [model]
    weights = out/clip/qp37/weights.ovqe
    channels = 32         ; architecture keys default to the checkpoint header

    [train]
    qp = 37
    steps = 300
    learning_rate = 5e-4

    [enhance]
    input = decoded.yuv   ; decoded file with the [sequence] geometry

    [evaluate]
    decoded = decoded.yuv ; optional: compare two existing files instead
    enhanced = enhanced.yuv

Every command validates the whole configuration before reading video data.
Outputs go to ``<out>/<sequence>/<qp>/`` with fixed file names.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import shlex
import shutil
import sys
from dataclasses import dataclass, field
from typing import List, Optional

from .codec import (DEFAULT_DECODER_TEMPLATE, DEFAULT_ENCODER_TEMPLATE, CodecSpec,
                    encode_decode)
from .errors import (CheckpointError, CodecError, ConfigError, FormatError, IntegrityError,
                     NumericError, OverlapError, PairingError)
from .frame_io import SUPPORTED_BIT_DEPTHS, frame_bytes, read_yuv420, write_yuv420
from .metrics import bd_rate, delta_psnr, rd_sweep, write_bdrate_csv, write_rd_csv
from .net import ModelConfig, checkpoint_config, enhance_sequence, load_weights, save_weights
from .training import TrainConfig, make_patches, train, write_loss_csv

log = logging.getLogger("ovqe")

EXIT_OK, EXIT_VALIDATION, EXIT_CODEC, EXIT_NUMERIC = 0, 2, 3, 4

MODEL_KEYS = ("channels", "temporal_radius", "propagation_rounds", "ofae_blocks", "offset_groups")


@dataclass
class SequenceEntry:
    name: str
    path: Optional[str]
    width: int
    height: int
    bit_depth: int = 8
    frame_rate: float = 30.0
    frames: Optional[int] = None

    def load(self):
        seq = read_yuv420(self.path, self.width, self.height, self.bit_depth,
                          self.frames, self.frame_rate)
        seq.name = self.name
        return seq


@dataclass
class RunConfig:
    sequences: List[SequenceEntry]
    codec: CodecSpec
    qps: List[int]
    out_dir: str
    model: ModelConfig
    weights: Optional[str] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    train_qp: int = 37
    enhance_input: Optional[str] = None
    eval_decoded: Optional[str] = None
    eval_enhanced: Optional[str] = None


# --- config parsing ------------------------------------------------------------------

def _get(section, key, conv, default=None, required=False):
    if section is None or key not in section:
        if required:
            name = section.name if section is not None else "?"
            raise ConfigError(f"[{name}] missing required key {key!r}")
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key} = {raw!r}: {exc}") from None


def _int_list(text: str) -> List[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _check_file(path: str, what: str) -> str:
    if not path:
        raise ConfigError(f"{what} path is empty")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _check_yuv(path: Optional[str], entry: SequenceEntry, what: str) -> None:
    if path is None:
        raise ConfigError(f"{what}: no path configured")
    _check_file(path, what)
    per_frame = frame_bytes(entry.width, entry.height, entry.bit_depth)
    size = os.path.getsize(path)
    if size == 0 or size % per_frame:
        raise ConfigError(f"{what} {path}: {size} bytes is not a whole number of "
                          f"{entry.width}x{entry.height} {entry.bit_depth}-bit frames ({per_frame} bytes each)")


def _parse_sequences(cp, base) -> List[SequenceEntry]:
    out = []
    for name in cp.sections():
        if name != "sequence" and not name.startswith("sequence "):
            continue
        s = cp[name]
        path = _resolve(_get(s, "path", str), base)
        label = name[len("sequence"):].strip() or _get(s, "name", str) or \
            (os.path.splitext(os.path.basename(path))[0] if path else "sequence")
        entry = SequenceEntry(
            label, path,
            _get(s, "width", int, required=True), _get(s, "height", int, required=True),
            _get(s, "bit_depth", int, 8), _get(s, "frame_rate", float, 30.0), _get(s, "frames", int))
        if entry.width < 2 or entry.height < 2 or entry.width % 2 or entry.height % 2:
            raise ConfigError(f"[{name}] width/height must be even and >= 2")
        if entry.bit_depth not in SUPPORTED_BIT_DEPTHS:
            raise ConfigError(f"[{name}] bit_depth must be one of {SUPPORTED_BIT_DEPTHS}")
        if entry.frame_rate <= 0 or (entry.frames is not None and entry.frames < 1):
            raise ConfigError(f"[{name}] frame_rate must be > 0 and frames >= 1")
        out.append(entry)
    if not out:
        raise ConfigError("config declares no [sequence] section")
    names = [e.name for e in out]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate sequence names: {names}")
    return out


def _resolve(path, base):
    if path is None or os.path.isabs(path):
        return path
    return os.path.join(base, path)


def load_config(path: str, out_dir: Optional[str] = None, seed: Optional[int] = None,
                keep_temp: bool = False):
    """Parse and statically validate a run config (no video data is read).

    Returns ``(RunConfig, explicit_model_keys)``; the second item lists the
    architecture keys set in ``[model]`` so they can be checked against a
    checkpoint header.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))
    sequences = _parse_sequences(cp, base)

    c = cp["codec"] if cp.has_section("codec") else None
    qps = _get(c, "qps", _int_list, [32, 37, 42, 47])
    if not qps:
        raise ConfigError("[codec] qps is empty")
    try:
        codec = CodecSpec(
            kind=_get(c, "kind", str, "mock"), qp=qps[0],
            encoder_path=_get(c, "encoder", str), decoder_path=_get(c, "decoder", str),
            extra_flags=_get(c, "extra_flags", shlex.split, []),
            encoder_template=_get(c, "encoder_template", str, DEFAULT_ENCODER_TEMPLATE),
            decoder_template=_get(c, "decoder_template", str, DEFAULT_DECODER_TEMPLATE),
            keep_temp=keep_temp)
        for qp in qps:
            codec.check_qp(qp)
    except ValueError as exc:
        raise ConfigError(f"[codec] {exc}") from None

    t = cp["train"] if cp.has_section("train") else None
    defaults = TrainConfig()
    try:
        train_cfg = TrainConfig(
            learning_rate=_get(t, "learning_rate", float, defaults.learning_rate),
            betas=(_get(t, "beta1", float, defaults.betas[0]), _get(t, "beta2", float, defaults.betas[1])),
            steps=_get(t, "steps", int, defaults.steps),
            batch_size=_get(t, "batch_size", int, defaults.batch_size),
            patch_size=_get(t, "patch_size", int, defaults.patch_size),
            stride=_get(t, "stride", int, defaults.stride),
            eps_loss=_get(t, "eps_loss", float, defaults.eps_loss),
            seed=seed if seed is not None else _get(t, "seed", int, defaults.seed),
            checkpoint_every=_get(t, "checkpoint_every", int, defaults.checkpoint_every),
            dtype=_get(t, "dtype", str, defaults.dtype))
        train_cfg.torch_dtype
    except KeyError:
        raise ConfigError("[train] dtype must be float32 or float64") from None
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from None
    train_qp = _get(t, "qp", int, 37)
    try:
        codec.check_qp(train_qp)
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from None

    m = cp["model"] if cp.has_section("model") else None
    weights = _resolve(_get(m, "weights", str), base)
    explicit = {k: _get(m, k, int) for k in MODEL_KEYS}
    explicit = {k: v for k, v in explicit.items() if v is not None}
    model_seed = seed if seed is not None else _get(m, "seed", int, 0)
    try:
        model_cfg = ModelConfig(**{**ModelConfig().to_dict(), **explicit, "seed": model_seed})
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from None

    e = cp["enhance"] if cp.has_section("enhance") else None
    ev = cp["evaluate"] if cp.has_section("evaluate") else None
    out = out_dir or _get(cp["output"] if cp.has_section("output") else None, "dir", str) or "ovqe_out"
    return RunConfig(
        sequences, codec, qps, _resolve(out, os.getcwd()), model_cfg, weights, train_cfg, train_qp,
        _resolve(_get(e, "input", str), base),
        _resolve(_get(ev, "decoded", str), base), _resolve(_get(ev, "enhanced", str), base),
        ), explicit


def _resolve_model(cfg: RunConfig, explicit: dict, required: bool):
    """Validate the weights path and settle the model config against its header."""
    if cfg.weights is None:
        if required:
            raise ConfigError("[model] weights is required for this command")
        return
    _check_file(cfg.weights, "weights")
    try:
        stored = checkpoint_config(cfg.weights, cfg.model.seed)
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from None
    for k, v in explicit.items():
        if getattr(stored, k) != v:
            raise ConfigError(f"[model] {k} = {v} but checkpoint {cfg.weights} stores {getattr(stored, k)}")
    cfg.model = stored


def _check_codec_binaries(cfg: RunConfig) -> None:
    if cfg.codec.kind != "external":
        return
    for role, path in (("encoder", cfg.codec.encoder_path), ("decoder", cfg.codec.decoder_path)):
        if not path:
            raise ConfigError(f"[codec] no {role} configured and OVQE_{role.upper()} is unset")
        if shutil.which(path) is None:
            raise ConfigError(f"[codec] {role} not found or not executable: {path}")


def _prepare_out(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory is not writable: {path}")


# --- plotting ------------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_psnr_curves(report, path, title=""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    frames = range(len(report.per_frame_delta))
    ax.plot(frames, report.baseline.per_frame, "o-", ms=3, label="decoded")
    ax.plot(frames, report.enhanced.per_frame, "s-", ms=3, label="enhanced")
    ax.set_xlabel("frame")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_rd_curves(sweep, path, title=""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for pts, style, label in ((sweep.baseline, "o-", "decoded"), (sweep.enhanced, "s-", "enhanced")):
        pts = sorted(pts, key=lambda p: p.bitrate_kbps)
        ax.plot([p.bitrate_kbps for p in pts], [p.psnr_db for p in pts], style, label=label)
    ax.set_xlabel("bitrate (kbps)")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_loss(losses, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(len(losses)), losses, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("Charbonnier loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


# --- commands ------------------------------------------------------------------------

def _qp_dir(cfg: RunConfig, name: str, qp) -> str:
    d = os.path.join(cfg.out_dir, name, f"qp{qp}" if isinstance(qp, int) else str(qp))
    os.makedirs(d, exist_ok=True)
    return d


def _enhancer(cfg: RunConfig):
    if cfg.weights is None:
        return None
    model = load_weights(cfg.weights, cfg.model)
    return lambda seq: enhance_sequence(seq, model, cfg.model)


def cmd_enhance(cfg: RunConfig) -> int:
    if cfg.enhance_input is None:
        raise ConfigError("[enhance] input is required")
    entry = cfg.sequences[0]
    _check_yuv(cfg.enhance_input, entry, "enhance input")
    reference = entry.path is not None
    if reference:
        _check_yuv(entry.path, entry, "reference")
    _prepare_out(cfg.out_dir)

    decoded = read_yuv420(cfg.enhance_input, entry.width, entry.height, entry.bit_depth,
                          entry.frames, entry.frame_rate)
    enhanced = _enhancer(cfg)(decoded)
    d = _qp_dir(cfg, entry.name, "enhance")
    write_yuv420(enhanced, os.path.join(d, "enhanced.yuv"))
    if reference:
        report = delta_psnr(enhanced, decoded, entry.load())
        report.to_csv(os.path.join(d, "psnr.csv"))
        log.info("%s: delta PSNR %.4f dB", entry.name, report.average_delta)
    log.info("wrote %d frames to %s", len(enhanced), d)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    for e in cfg.sequences:
        _check_yuv(e.path, e, f"sequence {e.name}")
    _prepare_out(cfg.out_dir)

    samples = []
    for i, e in enumerate(cfg.sequences):
        raw = e.load()
        dec = encode_decode(raw, cfg.codec.with_qp(cfg.train_qp),
                            os.path.join(cfg.out_dir, e.name, "work")).decoded
        samples += make_patches(raw, dec, cfg.train.patch_size, cfg.train.stride,
                                cfg.model.temporal_radius, seed=cfg.train.seed + i)
    name = cfg.sequences[0].name if len(cfg.sequences) == 1 else "all"
    d = _qp_dir(cfg, name, cfg.train_qp)
    ckpt_dir = os.path.join(d, "checkpoints") if cfg.train.checkpoint_every else None
    if ckpt_dir:
        os.makedirs(ckpt_dir, exist_ok=True)
    init = load_weights(cfg.weights, cfg.model, cfg.train.torch_dtype) if cfg.weights else None

    def progress(step, loss):
        if step % 50 == 0:
            log.info("step %d loss %.6f", step, loss)

    result = train(samples, cfg.model, cfg.train, model=init, checkpoint_dir=ckpt_dir, on_step=progress)
    save_weights(result.model, os.path.join(d, "weights.ovqe"))
    write_loss_csv(result.losses, os.path.join(d, "loss.csv"))
    if result.losses:
        plot_loss(result.losses, os.path.join(d, "loss.png"))
        log.info("loss %.6f -> %.6f over %d steps", result.losses[0], result.losses[-1], len(result.losses))
    return EXIT_OK


def _evaluate_files(cfg: RunConfig) -> int:
    entry = cfg.sequences[0]
    _check_yuv(entry.path, entry, "reference")
    _check_yuv(cfg.eval_decoded, entry, "decoded")
    _check_yuv(cfg.eval_enhanced, entry, "enhanced")
    _prepare_out(cfg.out_dir)
    load = lambda p: read_yuv420(p, entry.width, entry.height, entry.bit_depth,  # noqa: E731
                                 entry.frames, entry.frame_rate)
    report = delta_psnr(load(cfg.eval_enhanced), load(cfg.eval_decoded), entry.load())
    d = _qp_dir(cfg, entry.name, "files")
    report.to_csv(os.path.join(d, "psnr.csv"))
    plot_psnr_curves(report, os.path.join(d, "psnr.png"), entry.name)
    log.info("%s: delta PSNR %.4f dB", entry.name, report.average_delta)
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    if (cfg.eval_decoded is None) != (cfg.eval_enhanced is None):
        raise ConfigError("[evaluate] decoded and enhanced must be given together")
    if cfg.eval_decoded is not None:
        return _evaluate_files(cfg)
    for e in cfg.sequences:
        _check_yuv(e.path, e, f"sequence {e.name}")
    _prepare_out(cfg.out_dir)
    enhancer = _enhancer(cfg)
    for e in cfg.sequences:
        raw = e.load()
        for qp in cfg.qps:
            d = _qp_dir(cfg, e.name, qp)
            res = encode_decode(raw, cfg.codec.with_qp(qp), os.path.join(d, "work"))
            enhanced = enhancer(res.decoded) if enhancer else res.decoded
            report = delta_psnr(enhanced, res.decoded, raw)
            report.to_csv(os.path.join(d, "psnr.csv"))
            plot_psnr_curves(report, os.path.join(d, "psnr.png"), f"{e.name} QP {qp}")
            log.info("%s qp %d: delta PSNR %.4f dB", e.name, qp, report.average_delta)
    return EXIT_OK


def cmd_bdrate(cfg: RunConfig) -> int:
    for e in cfg.sequences:
        _check_yuv(e.path, e, f"sequence {e.name}")
    if len(cfg.qps) < 4:
        raise ConfigError(f"BD-rate needs at least 4 QPs, got {cfg.qps}")
    _prepare_out(cfg.out_dir)
    enhancer = _enhancer(cfg)
    rows = []
    for e in cfg.sequences:
        raw = e.load()

        def per_qp(entry, decoded, enhanced, name=e.name):
            d = _qp_dir(cfg, name, entry.qp)
            entry.delta.to_csv(os.path.join(d, "psnr.csv"))

        sweep = rd_sweep(raw, cfg.qps, cfg.codec, enhancer,
                         workdir=os.path.join(cfg.out_dir, e.name, "work"), on_entry=per_qp)
        seq_dir = os.path.join(cfg.out_dir, e.name)
        write_rd_csv(sweep, os.path.join(seq_dir, "rd.csv"))
        plot_rd_curves(sweep, os.path.join(seq_dir, "rd.png"), e.name)
        value = bd_rate(sweep.baseline, sweep.enhanced)
        rows.append((e.name, "decoded", "enhanced", value))
        log.info("%s: BD-rate %.4f %%", e.name, value)
    write_bdrate_csv(rows, os.path.join(cfg.out_dir, "bdrate.csv"))
    return EXIT_OK


COMMANDS = {"enhance": cmd_enhance, "train": cmd_train, "evaluate": cmd_evaluate, "bdrate": cmd_bdrate}
NEEDS_WEIGHTS = {"enhance": True, "train": False, "evaluate": False, "bdrate": False}

_ERROR_SOURCES = [
    (ConfigError, "config", EXIT_VALIDATION),
    (FormatError, "frame_io", EXIT_VALIDATION),
    (PairingError, "metrics", EXIT_VALIDATION),
    (CheckpointError, "net", EXIT_VALIDATION),
    (OverlapError, "metrics", EXIT_VALIDATION),
    (CodecError, "codec", EXIT_CODEC),
    (IntegrityError, "codec", EXIT_CODEC),
    (NumericError, "numeric", EXIT_NUMERIC),
    (ValueError, "argument", EXIT_VALIDATION),
    (OSError, "io", EXIT_VALIDATION),
]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ovqe", description="Quality enhancement for decoded VVC video.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--seed", type=int, help="override training and initialization seeds")
    p.add_argument("--keep-temp", action="store_true", help="keep codec work files")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, explicit = load_config(args.config, args.out, args.seed, args.keep_temp)
        _resolve_model(cfg, explicit, NEEDS_WEIGHTS[args.command])
        _check_codec_binaries(cfg)
        return COMMANDS[args.command](cfg)
    except Exception as exc:
        for cls, source, code in _ERROR_SOURCES:
            if isinstance(exc, cls):
                print(f"ovqe {args.command}: {source} error: {exc}", file=sys.stderr)
                output = getattr(exc, "output", "")
                if output:
                    print(output.rstrip(), file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
