"""Two-phase training: content-only generator pretraining, then alternating
discriminator / generator updates with the image-level and patch-level branches.
"""
from __future__ import annotations

import json
import logging
import os
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
import yaml

from . import ctss
from .imagecore import boost_saturation, load_png, to_signed, to_unit
from .losses import (
    CSV_HEADER,
    LossReport,
    LossWeights,
    color_loss,
    content_loss,
    lsgan_d_loss,
    lsgan_g_loss,
    report_from,
    total_losses,
    tv_loss,
)
from .nets import (
    Generator,
    NetConfig,
    image_discriminator,
    init_weights,
    make_embedder,
    patch_discriminator,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"CTSS"


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


# --------------------------------------------------------------------------- #
# Configuration
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    epochs_total: int = 80
    epochs_pretrain: int = 10
    lr_pretrain: float = 2e-4
    lr_main: float = 2e-5
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    seed: int = 0
    image_size: int = 256
    log_every: int = 1
    checkpoint_every: int = 1000
    embedder: str = "test-random"
    huber_delta: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    ctss: ctss.CtssConfig = field(default_factory=ctss.CtssConfig)
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if not 0 <= self.epochs_pretrain < self.epochs_total:
            raise ConfigError(f"need 0 <= epochs_pretrain < epochs_total, got {self.epochs_pretrain}, {self.epochs_total}")
        if not (self.lr_pretrain > 0 and self.lr_main > 0):
            raise ConfigError("learning rates must be > 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("batch_size, log_every and checkpoint_every must be >= 1")

    @property
    def ctss_effective(self) -> ctss.CtssConfig:
        """Sampler geometry rescaled from the 256-pixel reference to ``image_size``."""
        return self.ctss.scaled_to(self.image_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict, require_all: bool = False) -> "TrainConfig":
        nested = {"weights": LossWeights, "ctss": ctss.CtssConfig, "net": NetConfig}
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key: {unknown[0]}")
        if require_all:
            for name in sorted(known - set(nested)):
                if name not in data:
                    raise ConfigError(f"missing config key: {name}")
        kwargs = {}
        for k, v in data.items():
            if k in nested:
                sub_known = {f.name for f in fields(nested[k])}
                bad = sorted(set(v or {}) - sub_known)
                if bad:
                    raise ConfigError(f"unknown config key: {k}.{bad[0]}")
                v = nested[k](**(v or {}))
            kwargs[k] = v
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "TrainConfig":
        """Read a YAML key-value file; every top-level scalar field must be present."""
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a key-value mapping")
        return cls.from_dict(data, require_all=True)

    def dump(self, path: str | os.PathLike):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


# --------------------------------------------------------------------------- #
# Checkpoints
# --------------------------------------------------------------------------- #

@dataclass
class Checkpoint:
    step: int
    epoch: int
    phase: str
    generator: "OrderedDict[str, torch.Tensor]"
    d_img: "OrderedDict[str, torch.Tensor]"
    d_patch: "OrderedDict[str, torch.Tensor]"
    opt_g: dict
    opt_d: dict
    rng_state: dict
    config: dict
    format_version: int = FORMAT_VERSION


_DTYPES = {0: (torch.float32, "<f4"), 1: (torch.float64, "<f8")}
_CODES = {torch.float32: 0, torch.float64: 1}


def _pack_str(s: str) -> bytes:
    raw = s.encode()
    return struct.pack("<H", len(raw)) + raw


def _pack_table(name: str, tensors: dict, dtype: torch.dtype) -> bytes:
    out = [_pack_str(name), struct.pack("<I", len(tensors))]
    for key, t in tensors.items():
        arr = t.detach().to(dtype).contiguous().cpu().numpy().astype(_DTYPES[_CODES[dtype]][1], copy=False)
        out.append(_pack_str(key))
        out.append(struct.pack("<BB", _CODES[dtype], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint file")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode()

    def table(self) -> tuple[str, "OrderedDict[str, torch.Tensor]"]:
        name = self.string()
        (count,) = self.unpack("<I")
        entries = OrderedDict()
        for _ in range(count):
            key = self.string()
            code, ndim = self.unpack("<BB")
            if code not in _DTYPES:
                raise CheckpointError(f"unknown dtype code {code}")
            shape = self.unpack(f"<{ndim}I") if ndim else ()
            np_dtype = np.dtype(_DTYPES[code][1])
            nbytes = int(np.prod(shape, dtype=np.int64)) * np_dtype.itemsize
            arr = np.frombuffer(self.take(nbytes), dtype=np_dtype).reshape(shape)
            entries[key] = torch.from_numpy(arr.astype(np_dtype.newbyteorder("="), copy=True))
        return name, entries


def _opt_tables(prefix: str, opt_state: dict) -> tuple[dict, list]:
    moments = {"exp_avg": OrderedDict(), "exp_avg_sq": OrderedDict()}
    steps = []
    for name, st in opt_state.items():
        moments["exp_avg"][name] = st["exp_avg"]
        moments["exp_avg_sq"][name] = st["exp_avg_sq"]
        steps.append([name, float(st["step"])])
    return {f"{prefix}.exp_avg": moments["exp_avg"], f"{prefix}.exp_avg_sq": moments["exp_avg_sq"]}, steps


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    """Binary layout: ``CTSS`` magic, u32 version, u32-length JSON metadata, then
    named parameter tables (float32 weights, float64 optimizer moments), little-endian."""
    g_tables, g_steps = _opt_tables("opt_g", ckpt.opt_g)
    d_tables, d_steps = _opt_tables("opt_d", ckpt.opt_d)
    meta = {
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "phase": ckpt.phase,
        "rng_state": ckpt.rng_state,
        "config": ckpt.config,
        "opt_g_steps": g_steps,
        "opt_d_steps": d_steps,
    }
    meta_raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    tables = [
        _pack_table("generator", ckpt.generator, torch.float32),
        _pack_table("d_img", ckpt.d_img, torch.float32),
        _pack_table("d_patch", ckpt.d_patch, torch.float32),
    ]
    tables += [_pack_table(k, v, torch.float64) for k, v in {**g_tables, **d_tables}.items()]
    blob = b"".join([
        MAGIC,
        struct.pack("<I", ckpt.format_version),
        struct.pack("<I", len(meta_raw)),
        meta_raw,
        struct.pack("<I", len(tables)),
        *tables,
    ])
    tmp = Path(f"{os.fspath(path)}.tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    rd = _Reader(Path(path).read_bytes())
    if rd.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = rd.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})")
    (meta_len,) = rd.unpack("<I")
    meta = json.loads(rd.take(meta_len).decode())
    (ntables,) = rd.unpack("<I")
    tables = dict(rd.table() for _ in range(ntables))
    if rd.pos != len(rd.buf):
        raise CheckpointError(f"{path}: trailing bytes after the last table")

    def opt_state(prefix, steps):
        return OrderedDict(
            (name, {
                "step": step,
                "exp_avg": tables[f"{prefix}.exp_avg"][name],
                "exp_avg_sq": tables[f"{prefix}.exp_avg_sq"][name],
            })
            for name, step in steps
        )

    try:
        return Checkpoint(
            step=meta["step"],
            epoch=meta["epoch"],
            phase=meta["phase"],
            generator=tables["generator"],
            d_img=tables["d_img"],
            d_patch=tables["d_patch"],
            opt_g=opt_state("opt_g", meta["opt_g_steps"]),
            opt_d=opt_state("opt_d", meta["opt_d_steps"]),
            rng_state=meta["rng_state"],
            config=meta["config"],
            format_version=version,
        )
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing checkpoint section {exc}") from None


# --------------------------------------------------------------------------- #
# Data
# --------------------------------------------------------------------------- #

class DatasetHandle:
    """PNG folder with a seeded per-epoch shuffle and drop-last batching.

    Images are decoded once, resized to ``image_size`` if needed, and cached.
    """

    def __init__(self, root: str | os.PathLike, image_size: int, stream: int = 0):
        self.root = Path(root)
        self.image_size = image_size
        self.stream = stream
        if not self.root.is_dir():
            raise FileNotFoundError(f"dataset directory not found: {self.root}")
        self.files = sorted(p for p in self.root.iterdir() if p.suffix.lower() == ".png")
        if not self.files:
            raise ValueError(f"{self.root}: no PNG images found")
        self._cache: dict[int, torch.Tensor] = {}

    @classmethod
    def from_tensor(cls, images: torch.Tensor, stream: int = 0) -> "DatasetHandle":
        """In-memory dataset from an ``(N, 3, S, S)`` batch in ``[0, 1]``."""
        obj = cls.__new__(cls)
        obj.root, obj.image_size, obj.stream = None, images.shape[-1], stream
        obj.files = [f"<memory:{i}>" for i in range(images.shape[0])]
        obj._cache = {i: images[i:i + 1].float() for i in range(images.shape[0])}
        return obj

    def __len__(self):
        return len(self.files)

    def image(self, i: int) -> torch.Tensor:
        if i not in self._cache:
            img = load_png(self.files[i])
            if img.shape[-2:] != (self.image_size, self.image_size):
                img = F.interpolate(img, size=(self.image_size, self.image_size), mode="bilinear",
                                    align_corners=False, antialias=True).clamp(0, 1)
            self._cache[i] = img
        return self._cache[i]

    def order(self, epoch: int, seed: int) -> np.ndarray:
        return np.random.default_rng([seed, self.stream, epoch]).permutation(len(self))

    def batches_per_epoch(self, batch_size: int) -> int:
        return len(self) // batch_size

    def batch(self, index: int, batch_size: int, seed: int) -> torch.Tensor:
        """The ``index``-th batch of an endless epoch sequence."""
        per_epoch = self.batches_per_epoch(batch_size)
        if per_epoch == 0:
            raise ValueError(f"dataset of {len(self)} images is smaller than batch size {batch_size}")
        epoch, b = divmod(index, per_epoch)
        idx = self.order(epoch, seed)[b * batch_size:(b + 1) * batch_size]
        return torch.cat([self.image(int(i)) for i in idx])


# --------------------------------------------------------------------------- #
# Trainer
# --------------------------------------------------------------------------- #

def _named_opt_state(opt: torch.optim.Optimizer, named: list[tuple[str, torch.nn.Parameter]]) -> dict:
    out = OrderedDict()
    for name, p in named:
        st = opt.state.get(p)
        if st:
            out[name] = {"step": float(st["step"]), "exp_avg": st["exp_avg"].clone(), "exp_avg_sq": st["exp_avg_sq"].clone()}
    return out


def _restore_opt_state(opt: torch.optim.Optimizer, named: list[tuple[str, torch.nn.Parameter]], state: dict):
    by_name = dict(named)
    for name, st in state.items():
        if name not in by_name:
            raise CheckpointError(f"optimizer state for unknown parameter {name}")
        p = by_name[name]
        if st["exp_avg"].shape != p.shape:
            raise CheckpointError(f"optimizer state shape mismatch for {name}")
        opt.state[p] = {
            "step": torch.tensor(float(st["step"]), dtype=torch.float32),
            "exp_avg": st["exp_avg"].to(p.dtype).clone(),
            "exp_avg_sq": st["exp_avg_sq"].to(p.dtype).clone(),
        }


class Trainer:
    """Owns the three networks, the frozen embedder, both optimizers and the stride RNG."""

    def __init__(self, cfg: TrainConfig, embedder=None):
        self.cfg = cfg
        self.ctss_cfg = cfg.ctss_effective
        self.G = init_weights(Generator(cfg.net), cfg.seed)
        self.D_img = init_weights(image_discriminator(cfg.net), cfg.seed + 1)
        self.D_patch = init_weights(patch_discriminator(cfg.net), cfg.seed + 2)
        self.embedder = embedder if embedder is not None else make_embedder(cfg.embedder, seed=cfg.seed)
        self.rng = np.random.default_rng(cfg.seed)
        self.step = 0
        self.phase = "pretrain" if cfg.epochs_pretrain > 0 else "adversarial"
        self.opt_g = self._make_opt_g()
        self.opt_d = torch.optim.Adam(
            self._d_params(), lr=cfg.lr_main, betas=(cfg.adam_beta1, cfg.adam_beta2)
        )
        self.out_dir: Path | None = None

    # -- parameter bookkeeping ------------------------------------------------
    def _make_opt_g(self):
        lr = self.cfg.lr_pretrain if self.phase == "pretrain" else self.cfg.lr_main
        return torch.optim.Adam(self.G.parameters(), lr=lr, betas=(self.cfg.adam_beta1, self.cfg.adam_beta2))

    def _d_params(self):
        return list(self.D_img.parameters()) + list(self.D_patch.parameters())

    def _g_named(self):
        return list(self.G.named_parameters())

    def _d_named(self):
        return [(f"d_img.{k}", v) for k, v in self.D_img.named_parameters()] + [
            (f"d_patch.{k}", v) for k, v in self.D_patch.named_parameters()
        ]

    def enter_adversarial_phase(self):
        """Switch to alternating updates; the generator optimizer restarts at ``lr_main``."""
        if self.phase != "adversarial":
            self.phase = "adversarial"
            self.opt_g = self._make_opt_g()

    def _diverge(self, msg: str, losses: dict):
        if self.out_dir is not None:
            dump = self.out_dir / f"diverged_step{self.step}.json"
            dump.write_text(json.dumps({"step": self.step, "phase": self.phase, "losses": losses}, indent=2))
            msg += f" (diagnostics in {dump})"
        raise TrainingDiverged(msg)

    def _check(self, report: LossReport, what: str) -> LossReport:
        if not report.is_finite():
            self._diverge(f"non-finite loss in {what} at step {self.step}: {report.as_dict()}", report.as_dict())
        return report

    @staticmethod
    def _set_grad(module: torch.nn.Module, flag: bool):
        for p in module.parameters():
            p.requires_grad_(flag)

    # -- steps ----------------------------------------------------------------
    def pretrain_step(self, photos: torch.Tensor) -> LossReport:
        """One Adam update of the generator on the content loss alone."""
        x = to_signed(photos)
        loss = content_loss(x, self.G(x), self.embedder)
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        report = self._check(report_from({"content": loss, "total_G": loss}), "pretrain_step")
        self.opt_g.step()
        self.step += 1
        return report

    def train_step(self, photos: torch.Tensor, cartoons: torch.Tensor, rng: np.random.Generator | None = None) -> LossReport:
        """One discriminator update on the joint D objective, then one generator update."""
        w = self.cfg.weights
        rng = self.rng if rng is None else rng
        x, real = to_signed(photos), to_signed(cartoons)

        fake = self.G(x)
        if not torch.isfinite(fake).all():
            self._diverge(f"non-finite generator output in train_step at step {self.step}", {})
        fake_unit = to_unit(fake)
        stride = self.ctss_cfg.draw_stride(rng)
        c_patch = to_signed(ctss.sample(cartoons, self.ctss_cfg, stride).pixels)
        s_patch = to_signed(ctss.sample(fake_unit, self.ctss_cfg, stride).pixels)

        # discriminators: generator output is detached, so G is untouched
        self._set_grad(self.D_img, True)
        self._set_grad(self.D_patch, True)
        adv_global_D = lsgan_d_loss(self.D_img(real), self.D_img(fake.detach()))
        adv_local_D = lsgan_d_loss(self.D_patch(c_patch), self.D_patch(s_patch.detach()))
        d_terms = total_losses({"adv_global_D": adv_global_D, "adv_local_D": adv_local_D}, w)
        self.opt_d.zero_grad(set_to_none=True)
        d_terms["total_D"].backward()
        if not (torch.isfinite(adv_global_D) and torch.isfinite(adv_local_D)):
            self._check(report_from(d_terms), "train_step (discriminator)")
        self.opt_d.step()

        # generator: patch locations stay fixed, gradients reach G through patch pixels
        self._set_grad(self.D_img, False)
        self._set_grad(self.D_patch, False)
        g_terms = {
            "adv_global_G": lsgan_g_loss(self.D_img(fake)),
            "adv_local_G": lsgan_g_loss(self.D_patch(s_patch)),
            "content": content_loss(x, fake, self.embedder),
            "color": color_loss(photos, fake_unit, self.cfg.huber_delta),
            "tv": tv_loss(fake_unit),
        }
        g_terms = total_losses(g_terms, w)
        self.opt_g.zero_grad(set_to_none=True)
        g_terms["total_G"].backward()
        report = self._check(
            report_from({**g_terms, "adv_global_D": adv_global_D, "adv_local_D": adv_local_D,
                         "total_D": d_terms["total_D"]}),
            "train_step",
        )
        self.opt_g.step()
        self._set_grad(self.D_img, True)
        self._set_grad(self.D_patch, True)
        self.step += 1
        return report

    # -- state ----------------------------------------------------------------
    def checkpoint(self, epoch: int = 0) -> Checkpoint:
        return Checkpoint(
            step=self.step,
            epoch=epoch,
            phase=self.phase,
            generator=OrderedDict((k, v.detach().clone()) for k, v in self.G.state_dict().items()),
            d_img=OrderedDict((k, v.detach().clone()) for k, v in self.D_img.state_dict().items()),
            d_patch=OrderedDict((k, v.detach().clone()) for k, v in self.D_patch.state_dict().items()),
            opt_g=_named_opt_state(self.opt_g, self._g_named()),
            opt_d=_named_opt_state(self.opt_d, self._d_named()),
            rng_state=self.rng.bit_generator.state,
            config=self.cfg.to_dict(),
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, embedder=None) -> "Trainer":
        cfg = TrainConfig.from_dict(ckpt.config)
        tr = cls(cfg, embedder=embedder)
        tr.load_state(ckpt)
        return tr

    def load_state(self, ckpt: Checkpoint):
        try:
            self.G.load_state_dict(ckpt.generator)
            self.D_img.load_state_dict(ckpt.d_img)
            self.D_patch.load_state_dict(ckpt.d_patch)
        except RuntimeError as exc:
            raise CheckpointError(f"checkpoint does not match the network architecture: {exc}") from None
        self.step = ckpt.step
        self.phase = ckpt.phase
        self.opt_g = self._make_opt_g()
        self.opt_d = torch.optim.Adam(
            self._d_params(), lr=self.cfg.lr_main, betas=(self.cfg.adam_beta1, self.cfg.adam_beta2)
        )
        _restore_opt_state(self.opt_g, self._g_named(), ckpt.opt_g)
        _restore_opt_state(self.opt_d, self._d_named(), ckpt.opt_d)
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = ckpt.rng_state


# --------------------------------------------------------------------------- #
# Training loop and inference
# --------------------------------------------------------------------------- #

def _rewrite_log(path: Path, keep_below: int):
    """Drop log rows at or past ``keep_below`` so a resumed run appends seamlessly."""
    if not path.exists():
        path.write_text(CSV_HEADER + "\n")
        return
    lines = path.read_text().splitlines()
    kept = [CSV_HEADER] + [ln for ln in lines[1:] if ln and int(ln.split(",", 1)[0]) < keep_below]
    path.write_text("\n".join(kept) + "\n")


def fit(
    photo_ds: DatasetHandle,
    cartoon_ds: DatasetHandle,
    cfg: TrainConfig,
    out_dir: str | os.PathLike,
    resume: str | os.PathLike | None = None,
    max_steps: int | None = None,
    embedder=None,
) -> Checkpoint:
    """Run pretraining then alternating epochs, logging to ``loss.csv`` and writing checkpoints.

    ``max_steps`` stops early (the stop point is checkpointed); ``resume``
    continues from a checkpoint file and reproduces the uninterrupted trajectory.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config != cfg.to_dict():
            raise CheckpointError(f"{resume}: checkpoint configuration differs from the requested one")
        trainer = Trainer.from_checkpoint(ckpt, embedder=embedder)
    else:
        trainer = Trainer(cfg, embedder=embedder)
    trainer.out_dir = out

    per_epoch = photo_ds.batches_per_epoch(cfg.batch_size)
    if per_epoch == 0 or cartoon_ds.batches_per_epoch(cfg.batch_size) == 0:
        raise ValueError(f"both datasets need at least batch_size={cfg.batch_size} images")
    total = cfg.epochs_total * per_epoch
    stop = total if max_steps is None else min(total, max_steps)

    log_path = out / "loss.csv"
    _rewrite_log(log_path, trainer.step)
    with open(log_path, "a") as log_fh:
        while trainer.step < stop:
            step = trainer.step
            epoch = step // per_epoch
            photos = photo_ds.batch(step, cfg.batch_size, cfg.seed)
            if epoch < cfg.epochs_pretrain:
                report = trainer.pretrain_step(photos)
            else:
                trainer.enter_adversarial_phase()
                cartoons = cartoon_ds.batch(step, cfg.batch_size, cfg.seed)
                report = trainer.train_step(photos, cartoons)
            if step % cfg.log_every == 0:
                log_fh.write(report.csv_row(step) + "\n")
                log_fh.flush()
                log.info("step %d epoch %d %s total_G=%.4f total_D=%.4f",
                         step, epoch, trainer.phase, report.total_G, report.total_D)
            if trainer.step % cfg.checkpoint_every == 0 and trainer.step < stop:
                save_checkpoint(trainer.checkpoint(trainer.step // per_epoch), out / f"ckpt_{trainer.step:07d}.ctss")

    final = trainer.checkpoint(trainer.step // per_epoch)
    save_checkpoint(final, out / "final.ctss")
    return final


def generator_from_checkpoint(ckpt: Checkpoint) -> Generator:
    cfg = TrainConfig.from_dict(ckpt.config)
    gen = Generator(cfg.net)
    try:
        gen.load_state_dict(ckpt.generator)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint does not match the generator architecture: {exc}") from None
    return gen.eval()


@torch.no_grad()
def infer(photo: torch.Tensor, ckpt: Checkpoint | Generator, saturation_factor: float = 1.4) -> torch.Tensor:
    """Cartoonize RGB images in ``[0, 1]``; returns ``[0, 1]`` output of the same size.

    Inputs whose size is not a multiple of the generator stride are reflect-padded
    and cropped back.
    """
    gen = ckpt if isinstance(ckpt, Generator) else generator_from_checkpoint(ckpt)
    h, w = photo.shape[-2:]
    m = gen.multiple
    ph, pw = (-h) % m, (-w) % m
    x = to_signed(photo.float())
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    out = to_unit(gen(x))[..., :h, :w].clamp(0, 1)
    return boost_saturation(out, saturation_factor).clamp(0, 1)


def moving_average(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    return np.convolve(v, np.ones(window) / window, mode="valid")


def read_loss_log(path: str | os.PathLike) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, map(float, ln.split(",")))) for ln in lines[1:] if ln]
