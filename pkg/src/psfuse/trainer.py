"""DMG pretraining, joint cyclic training of the three GAN pairs, the learning
rate schedule, PCGK checkpoints and the ablation variants."""

import contextlib
import csv
import hashlib
import math
import struct
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import dmg as dmg_mod
from . import losses, metrics, resample, ssrc, synthgen
from .autodiff import ops
from .autodiff.optim import OptimState, adam_step, sgd_step
from .autodiff.tensor import Tensor
from .raster import Raster

CASES = ("baseline", "case1", "case2", "case3", "case4")
CHECKPOINT_MAGIC = b"PCGK"
CHECKPOINT_VERSION = 1


class NumericalError(ArithmeticError):
    """A loss became NaN or infinite."""


class CheckpointError(ValueError):
    pass


# -------------------------------------------------------------------- config
@dataclass
class TrainConfig:
    batch_size: int = 16
    patch_size: int = 64
    epochs: int = 40
    pretrain_epochs: int = 10
    lr: float = 2e-4
    disc_lr: float = 0.0  # 0 means "same as lr"
    lr_halving_period: int = 15
    beta1: float = 0.5
    beta2: float = 0.999
    # far below the usual 1e-8: N(0, 0.02) weights through eight DMG layers give
    # gradients near 1e-12, which a larger epsilon would swallow
    adam_eps: float = 1e-16
    lambda1: float = 10.0
    lambda2: float = 5.0
    label_a: float = 1.0
    label_b: float = 0.0
    label_c: float = 1.0
    seed: int = 0
    ablation_case: str = "baseline"
    radius: int = dmg_mod.DEFAULT_RADIUS
    guided_lambda: float = dmg_mod.DEFAULT_LAMBDA
    nblocks: int = 6
    scales: int = 2
    gb_depth: int = 3
    dmg_channels: int = 32
    ratio: int = 4
    dmg_adv_joint: bool = False
    update_order: str = "dc,df,f2c,c2f"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("batch_size", "patch_size", "lr", "lr_halving_period", "nblocks",
                     "scales", "gb_depth", "dmg_channels", "ratio", "radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("epochs", "pretrain_epochs", "disc_lr", "guided_lambda", "lambda1",
                     "lambda2", "adam_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.ablation_case not in CASES:
            raise ValueError(f"unknown ablation case {self.ablation_case!r}")
        if 2 ** self.scales != self.ratio:
            raise ValueError(f"scales {self.scales} does not match ratio {self.ratio}")
        if sorted(self.update_order.split(",")) != ["c2f", "dc", "df", "f2c"]:
            raise ValueError(f"update_order must order dc, df, f2c, c2f: {self.update_order!r}")

    @property
    def weights(self):
        return losses.LossWeights(self.lambda1, self.lambda2)

    @property
    def labels(self):
        return losses.LsganLabels(self.label_a, self.label_b, self.label_c)

    @property
    def discriminator_lr(self):
        return self.disc_lr or self.lr

    def lr_at(self, epoch, base=None):
        """Rate for a 0-based epoch: halved every ``lr_halving_period`` epochs."""
        base = self.lr if base is None else base
        return base * 0.5 ** (epoch // self.lr_halving_period)

    def to_text(self):
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            lines.append(f"{f.name}={_format_value(val)}")
        return "\n".join(lines) + "\n"

    def hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def resume_key(self):
        """Hash of everything a checkpoint must agree on; more epochs may be added."""
        return replace(self, epochs=0).hash()

    @classmethod
    def from_mapping(cls, mapping, base=None):
        """Config from string or typed values; unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        values = {} if base is None else {n: getattr(base, n) for n in known}
        for key, raw in mapping.items():
            name = key.replace("-", "_")
            if name not in known:
                raise KeyError(f"unknown config key {key!r}")
            values[name] = _coerce(known[name].type, raw, name)
        return cls(**values)


def _format_value(val):
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def _coerce(kind, raw, name):
    if not isinstance(raw, str):
        if kind is bool:
            return bool(raw)
        return kind(raw)
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("1", "true", "yes", "on")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ValueError(f"bad value for {name}: {raw!r}") from None
    return text


def parse_config_text(text):
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


# ---------------------------------------------------------------------- data
@dataclass
class Dataset:
    """Reduced-resolution training or test samples stacked as float32 arrays."""

    ids: list
    pan: np.ndarray   # (N, 1, P, P)
    ms: np.ndarray    # (N, b, P/r, P/r)
    ref: np.ndarray   # (N, b, P, P)

    def __len__(self):
        return len(self.ids)

    def subset(self, index):
        index = np.asarray(index)
        return Dataset([self.ids[i] for i in index], self.pan[index], self.ms[index],
                       self.ref[index])


def dataset_from_samples(ids, samples):
    """Stack Wald-degraded samples (each with a reference)."""
    if not samples:
        raise ValueError("empty dataset")
    pan = np.stack([s.pan.data for s in samples]).astype(np.float32)
    ms = np.stack([s.ms.data for s in samples]).astype(np.float32)
    ref = np.stack([s.reference.data for s in samples]).astype(np.float32)
    return Dataset(list(ids), pan, ms, ref)


def load_split(data_dir, split, ratio=4):
    """Read the manifest's ``split`` scenes and Wald-degrade each one."""
    rows = [r for r in synthgen.read_manifest(data_dir) if r[2] == split]
    if not rows:
        raise ValueError(f"no {split!r} scenes in {data_dir}")
    samples = [resample.wald_degrade(synthgen.load_scene(data_dir, sid, ratio))
               for sid, _, _ in rows]
    return dataset_from_samples([sid for sid, _, _ in rows], samples)


def batches(n, batch_size, seed, phase, epoch):
    """Seed-determined shuffled index batches; the last one may be short."""
    order = np.random.default_rng([seed, phase, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


# -------------------------------------------------------------------- models
class Models:
    """The networks a case needs; absent ones are None."""

    def __init__(self, cfg, bands=4):
        rng = np.random.default_rng(cfg.seed)
        case = cfg.ablation_case
        self.cfg = cfg
        self.bands = bands
        self.dmg = None
        self.c2f = self.f2c = self.dc = self.df = None
        if case != "case1":
            self.dmg = dmg_mod.DmgNet(bands, cfg.dmg_channels, rng=rng, prefix="dmg")
        if case in ("baseline", "case1", "case4"):
            self.c2f = ssrc.PyramidGenerator("c2f", cfg.scales, bands, cfg.nblocks,
                                             cfg.gb_depth, rng=rng, prefix="c2f")
        if case in ("baseline", "case1", "case3"):
            self.f2c = ssrc.PyramidGenerator("f2c", cfg.scales, bands, cfg.nblocks,
                                             cfg.gb_depth, rng=rng, prefix="f2c")
        if case in ("baseline", "case1", "case2", "case3"):
            self.dc = ssrc.Discriminator(bands, rng=rng, prefix="dc")
        if case in ("baseline", "case1", "case4"):
            self.df = ssrc.Discriminator(bands, rng=rng, prefix="df")

    def groups(self):
        out = {}
        for name in ("dmg", "c2f", "f2c", "dc", "df"):
            net = getattr(self, name)
            if net is not None:
                out[name] = net.parameters()
        return out

    def parameters(self):
        out = {}
        for group in self.groups().values():
            out.update(group)
        return out

    # ------------------------------------------------------------ inference
    def prefuse(self, pan, ms):
        """F_d for a batch: DMG output, or the plain average for case 1."""
        cfg = self.cfg
        if self.dmg is None:
            return Tensor(average_fusion(pan, ms, cfg.ratio))
        fused, _ = dmg_mod.dmg_fuse(self.dmg, pan, ms, cfg.ratio, cfg.radius, cfg.guided_lambda)
        return fused

    def fuse(self, pan, ms, mode="full", batch_size=16):
        """Fused arrays for stacked inputs; ``mode`` 'dmg' stops after pre-fusion."""
        out = []
        with ops.no_grad():
            for lo in range(0, len(pan), batch_size):
                fd = self.prefuse(pan[lo:lo + batch_size], ms[lo:lo + batch_size])
                if mode == "full":
                    if self.c2f is None:
                        raise ValueError("this model has no coarse-to-fine generator")
                    fd = ssrc.c2f_forward(self.c2f, ssrc.coarse_of(fd, self.cfg.scales))
                elif mode != "dmg":
                    raise ValueError(f"unknown fuse mode {mode!r}")
                out.append(fd.data)
        return np.concatenate(out)

    def refine(self, fused, batch_size=16):
        if self.c2f is None:
            raise ValueError("this model has no coarse-to-fine generator")
        out = []
        with ops.no_grad():
            for lo in range(0, len(fused), batch_size):
                x = Tensor(np.asarray(fused[lo:lo + batch_size], dtype=np.float32))
                out.append(ssrc.refine(self.c2f, x).data)
        return np.concatenate(out)


def average_fusion(pan, ms, ratio):
    """(EXP-upsampled MS + PAN replicated over bands) / 2."""
    up = resample.exp_upsample_array(np.asarray(ms, dtype=np.float64), ratio)
    pan = np.asarray(pan, dtype=np.float64)
    return ((up + pan) / 2).astype(np.float32)


@contextlib.contextmanager
def frozen(*nets):
    """Build graphs that treat these networks' parameters as constants."""
    params = [p for net in nets if net is not None for p in net.parameters().values()]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


# ---------------------------------------------------------------- optimizers
class Optimizers:
    """One Adam state per generator, one SGD state per discriminator."""

    def __init__(self, models):
        self.states = {}
        for name in models.groups():
            kind = "sgd" if name in ("dc", "df") else "adam"
            self.states[name] = OptimState(kind, 0.0)

    def step(self, models, name, lr, cfg):
        params = models.groups()[name]
        grads = {n: p.grad for n, p in params.items() if p.grad is not None}
        state = self.states[name]
        state.lr = lr
        if state.kind == "adam":
            adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        else:
            state.step += 1
            sgd_step(params, grads, lr)


def _zero_grads(models):
    for p in models.parameters().values():
        p.grad = None


def _backward(loss, name, record):
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericalError(f"{name} became {value}")
    record[name] = value
    loss.backward()


# ---------------------------------------------------------------- train steps
def pretrain_step(models, opts, batch, cfg, epoch):
    """D_C step on the DMG-fake loss, then DMG step on L_DMG + adversarial term."""
    pan, ms, ref = batch
    labels, rec = cfg.labels, {}
    lr, dlr = cfg.lr_at(epoch), cfg.lr_at(epoch, cfg.discriminator_lr)
    fd = models.prefuse(pan, ms)
    fd_c = ssrc.coarse_of(fd, cfg.scales)
    if models.dc is not None:
        with ops.no_grad():
            real = (ssrc.f2c_forward(models.f2c, Tensor(ref)).data if models.f2c is not None
                    else ssrc.coarse_of(Tensor(ref), cfg.scales).data)
        _zero_grads(models)
        loss = losses.dc_loss_dmg(models.dc(Tensor(fd_c.data)), models.dc(Tensor(real)), labels)
        _backward(loss, "L_DC_DMG", rec)
        opts.step(models, "dc", dlr, cfg)
    _zero_grads(models)
    loss = dmg_mod.dmg_loss(fd, ref)
    rec["L_DMG"] = float(loss.data)
    if models.dc is not None:
        with frozen(models.dc):
            adv = losses.adv_gen_loss(models.dc(fd_c), labels.a)
        rec["L_adv_DMG"] = float(adv.data)
        loss = loss + adv
    _backward(loss, "L_DMG_total", rec)
    opts.step(models, "dmg", lr, cfg)
    return rec


def joint_step(models, opts, batch, cfg, epoch):
    """One batch of joint cyclic training in ``cfg.update_order``."""
    pan, ms, ref = batch
    labels, weights, rec = cfg.labels, cfg.weights, {}
    lr, dlr = cfg.lr_at(epoch), cfg.lr_at(epoch, cfg.discriminator_lr)
    ref_t = Tensor(ref)
    # DMG parameters only change in the c2f step, so one graph serves every step
    fd = models.prefuse(pan, ms)
    fd_c = ssrc.coarse_of(fd, cfg.scales)
    fd_c_const = Tensor(fd_c.data)
    cache = {}

    def f2c_out():
        if "fc" not in cache:
            with frozen(models.dmg, models.c2f):
                cache["fc"] = ssrc.f2c_forward(models.f2c, ref_t)
        return cache["fc"]

    def c2f_out():
        if "ff" not in cache:
            cache["ff"] = ssrc.c2f_forward(models.c2f, fd_c)
        return cache["ff"]

    def step_dc():
        _zero_grads(models)
        fake = Tensor(f2c_out().data)
        loss = losses.dc_loss_f2c(models.dc(fd_c_const), models.dc(fake), labels)
        _backward(loss, "L_DC_F2C", rec)
        opts.step(models, "dc", dlr, cfg)

    def step_df():
        _zero_grads(models)
        loss = losses.disc_loss(models.df(ref_t), models.df(Tensor(c2f_out().data)),
                                labels.b, labels.c)
        _backward(loss, "L_DF", rec)
        opts.step(models, "df", dlr, cfg)

    def step_f2c():
        _zero_grads(models)
        fc = f2c_out()
        parts = {}
        with frozen(models.dc, models.c2f):
            if models.dc is not None:
                parts["adv"] = losses.adv_gen_loss(models.dc(fc), labels.a)
            if models.c2f is not None:
                parts["cyc"] = losses.cycle_loss(ssrc.c2f_forward(models.c2f, fc), ref_t)
        parts["rec"] = losses.recon_loss(fc, fd_c_const)
        loss = _combine(parts, weights, rec, "F2C")
        _backward(loss, "L_JC_F2C", rec)
        opts.step(models, "f2c", lr, cfg)
        cache.pop("fc")

    def step_c2f():
        _zero_grads(models)
        ff = c2f_out()
        parts = {}
        with frozen(models.df, models.f2c, models.dc):
            if models.df is not None:
                parts["adv"] = losses.adv_gen_loss(models.df(ff), labels.a)
            if models.f2c is not None:
                parts["cyc"] = losses.cycle_loss(ssrc.f2c_forward(models.f2c, ff), fd_c)
            if cfg.dmg_adv_joint and models.dc is not None and models.dmg is not None:
                parts["adv_dmg"] = losses.adv_gen_loss(models.dc(fd_c), labels.a)
        parts["rec"] = losses.recon_loss(ff, ref_t)
        loss = _combine(parts, weights, rec, "C2F")
        _backward(loss, "L_JC_C2F", rec)
        opts.step(models, "c2f", lr, cfg)
        if models.dmg is not None:
            opts.step(models, "dmg", lr, cfg)

    def step_f2c_only():
        # case 3: F2C and DMG trained together through the reconstruction target
        _zero_grads(models)
        with frozen(models.dmg):
            fc = ssrc.f2c_forward(models.f2c, ref_t)
        parts = {}
        with frozen(models.dc):
            parts["adv"] = losses.adv_gen_loss(models.dc(fc), labels.a)
        parts["rec"] = losses.recon_loss(fc, fd_c)
        loss = _combine(parts, weights, rec, "F2C")
        _backward(loss, "L_JC_F2C", rec)
        opts.step(models, "f2c", lr, cfg)
        opts.step(models, "dmg", lr, cfg)

    steps = {"dc": step_dc, "df": step_df, "f2c": step_f2c, "c2f": step_c2f}
    for name in cfg.update_order.split(","):
        if name == "dc" and models.dc is None:
            continue
        if name == "df" and models.df is None:
            continue
        if name == "f2c" and models.f2c is None:
            continue
        if name == "c2f" and models.c2f is None:
            if models.f2c is not None:
                step_f2c_only()
            continue
        if name == "f2c" and models.c2f is None:
            continue  # handled together with DMG in step_f2c_only
        steps[name]()
    return rec


def _combine(parts, weights, rec, tag):
    for key, val in parts.items():
        rec[f"L_{key}_{tag}"] = float(val.data)
    zero = ops.scale(parts["rec"], 0.0)
    loss = losses.joint_loss(parts.get("adv", zero), parts.get("cyc", zero), parts["rec"],
                             weights)
    if "adv_dmg" in parts:
        loss = loss + parts["adv_dmg"]
    return loss


def dmg_only_step(models, opts, batch, cfg, epoch):
    """Case 2: the DMG alone, trained by its supervised loss."""
    pan, ms, ref = batch
    rec = {}
    _zero_grads(models)
    loss = dmg_mod.dmg_loss(models.prefuse(pan, ms), ref)
    _backward(loss, "L_DMG", rec)
    opts.step(models, "dmg", cfg.lr_at(epoch), cfg)
    return rec


# ------------------------------------------------------------------- driver
PHASES = ("pretrain", "joint")


@dataclass
class TrainState:
    phase: str = "pretrain"
    epoch: int = 0  # epochs completed in ``phase``
    step: int = 0   # global step counter


class Trainer:
    """Runs both phases for one case; resumable at epoch boundaries."""

    def __init__(self, cfg, train_set, out_dir=None, log=None):
        if len(train_set) == 0:
            raise ValueError("empty dataset")
        self.cfg = cfg
        self.data = train_set
        self.models = Models(cfg, bands=train_set.ms.shape[1])
        self.opts = Optimizers(self.models)
        self.state = TrainState()
        self.out_dir = None if out_dir is None else Path(out_dir)
        self.log_rows = [] if log is None else log

    def phase_plan(self):
        case = self.cfg.ablation_case
        if case == "case2":
            return [("pretrain", self.cfg.pretrain_epochs + self.cfg.epochs, dmg_only_step)]
        plan = []
        if self.models.dmg is not None:
            step = dmg_only_step if case == "case4" else pretrain_step
            plan.append(("pretrain", self.cfg.pretrain_epochs, step))
        plan.append(("joint", self.cfg.epochs, joint_step))
        return plan

    def run(self, until=None, checkpoint_every_epoch=True):
        """Train to completion, or stop after ``until`` epochs of this call."""
        done = 0
        for phase, n_epochs, step_fn in self.phase_plan():
            if PHASES.index(phase) < PHASES.index(self.state.phase):
                continue
            if phase != self.state.phase:
                self.state.phase, self.state.epoch = phase, 0
            while self.state.epoch < n_epochs:
                if until is not None and done >= until:
                    return self.state
                self._epoch(phase, step_fn)
                done += 1
                if checkpoint_every_epoch and self.out_dir is not None:
                    self.save(self.out_dir / "checkpoint.pcgk")
        # a finished run rests at the end of its last phase, so a larger epoch
        # count on resume simply continues it
        return self.state

    def _epoch(self, phase, step_fn):
        cfg, data = self.cfg, self.data
        for index in batches(len(data), cfg.batch_size, cfg.seed, PHASES.index(phase),
                             self.state.epoch):
            batch = (data.pan[index], data.ms[index], data.ref[index])
            rec = step_fn(self.models, self.opts, batch, cfg, self.state.epoch)
            self.state.step += 1
            for name, value in rec.items():
                self.log_rows.append((self.state.step, f"{phase}/{name}", value))
        self.state.epoch += 1

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "loss", "value"])
            for step, name, value in self.log_rows:
                writer.writerow([step, name, repr(value)])

    def save(self, path):
        save_checkpoint(path, self.models, self.opts, self.state, self.cfg)

    @classmethod
    def resume(cls, cfg, train_set, path, out_dir=None):
        trainer = cls(cfg, train_set, out_dir)
        load_checkpoint(path, trainer.models, trainer.opts, trainer.state, cfg)
        return trainer


# --------------------------------------------------------------- checkpoints
def _pack_str(text):
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _pack_array(name, arr):
    arr = np.asarray(arr)
    head = _pack_str(name) + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f4").tobytes()


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals

    def string(self):
        (n,) = self.take("<H")
        text = self.raw[self.pos:self.pos + n].decode("utf-8")
        self.pos += n
        return text

    def array(self):
        name = self.string()
        (ndim,) = self.take("<B")
        shape = self.take(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        end = self.pos + 4 * count
        if end > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(self.raw, dtype="<f4", count=count, offset=self.pos).reshape(shape)
        self.pos = end
        return name, arr.astype(np.float32)


def checkpoint_bytes(models, opts, state, cfg):
    out = [CHECKPOINT_MAGIC, struct.pack("<B", CHECKPOINT_VERSION), _pack_str(cfg.resume_key()),
           _pack_str(state.phase), struct.pack("<II", state.epoch, state.step)]
    params = models.parameters()
    out.append(struct.pack("<I", len(params)))
    out.extend(_pack_array(name, p.data) for name, p in params.items())
    out.append(struct.pack("<I", len(opts.states)))
    for name, st in opts.states.items():
        out.append(_pack_str(name) + _pack_str(st.kind) + struct.pack("<dQ", st.lr, st.step))
        moments = [(f"m:{k}", v) for k, v in st.first.items()]
        moments += [(f"v:{k}", v) for k, v in st.second.items()]
        out.append(struct.pack("<I", len(moments)))
        out.extend(_pack_array(k, v) for k, v in moments)
    return b"".join(out)


def save_checkpoint(path, models, opts, state, cfg):
    Path(path).write_bytes(checkpoint_bytes(models, opts, state, cfg))


def load_checkpoint(path, models, opts=None, state=None, cfg=None):
    """Restore parameters (and optimizer/progress state when given) in place."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a PCGK checkpoint")
    rd = _Reader(raw)
    rd.pos = 4
    (version,) = rd.take("<B")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    saved_hash = rd.string()
    if cfg is not None and opts is not None and saved_hash != cfg.resume_key():
        raise CheckpointError("checkpoint was written with a different config")
    phase = rd.string()
    epoch, step = rd.take("<II")
    params = models.parameters()
    (n_params,) = rd.take("<I")
    seen = set()
    for _ in range(n_params):
        name, arr = rd.array()
        if name not in params:
            raise CheckpointError(f"unexpected parameter {name!r}")
        if arr.shape != params[name].data.shape:
            raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs "
                                  f"{params[name].data.shape}")
        params[name].data = arr.copy()
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters {sorted(missing)[:3]}")
    (n_opts,) = rd.take("<I")
    for _ in range(n_opts):
        name, kind = rd.string(), rd.string()
        lr, nstep = rd.take("<dQ")
        (n_mom,) = rd.take("<I")
        moments = [rd.array() for _ in range(n_mom)]
        if opts is None:
            continue
        if name not in opts.states:
            raise CheckpointError(f"unexpected optimizer {name!r}")
        st = OptimState(kind, lr, nstep)
        for key, arr in moments:
            table = st.first if key.startswith("m:") else st.second
            table[key[2:]] = arr.copy()
        opts.states[name] = st
    if rd.pos != len(raw):
        raise CheckpointError("trailing bytes in checkpoint")
    if state is not None:
        state.phase, state.epoch, state.step = phase, epoch, step
    return saved_hash


def checkpoint_case(path):
    """Parameter names stored in a checkpoint (used to infer the model layout)."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a PCGK checkpoint")
    rd = _Reader(raw)
    rd.pos = 5
    rd.string()
    rd.string()
    rd.take("<II")
    (n_params,) = rd.take("<I")
    return [rd.array()[0] for _ in range(n_params)]


# ----------------------------------------------------------------- ablation
def evaluate(models, test_set, methods, ratio=4, dataset="", config_hash=""):
    """Reduced-resolution reports for each requested method on every test sample.

    Methods: ``exp`` (EXP-interpolated MS), ``dmg`` (pre-fusion output),
    ``full`` (pre-fusion then coarse-to-fine), ``refine_avg`` (average fusion
    refined by the coarse-to-fine generator).
    """
    products = {}
    for method in methods:
        if method == "exp":
            products[method] = resample.exp_upsample_array(
                test_set.ms.astype(np.float64), ratio)
        elif method in ("dmg", "full"):
            products[method] = models.fuse(test_set.pan, test_set.ms, method)
        elif method == "average":
            products[method] = average_fusion(test_set.pan, test_set.ms, ratio)
        elif method == "refine_avg":
            products[method] = models.refine(average_fusion(test_set.pan, test_set.ms, ratio))
        else:
            raise ValueError(f"unknown method {method!r}")
    reports = []
    for i, sid in enumerate(test_set.ids):
        ref = Raster(test_set.ref[i].astype(np.float64))
        for method, arr in products.items():
            fused = Raster(np.asarray(arr[i], dtype=np.float64))
            reports.append(metrics.reduced_report(fused, ref, sid, method, ratio,
                                                  dataset=dataset, config_hash=config_hash))
    return reports


CASE_OUTPUT = {"baseline": "full", "case1": "full", "case2": "dmg", "case3": "dmg",
               "case4": "full"}


def run_ablation(case, train_set, test_set, cfg, out_dir=None, extra_methods=(), dataset=""):
    """Train the reduced model for ``case`` and report on held-out data.

    Returns (trainer, reports); the case's own output is reported under the
    method name ``case``.
    """
    if case not in CASES:
        raise ValueError(f"unknown ablation case {case!r}")
    cfg = TrainConfig.from_mapping({"ablation_case": case}, base=cfg)
    trainer = Trainer(cfg, train_set, out_dir)
    trainer.run()
    reports = evaluate(trainer.models, test_set, [CASE_OUTPUT[case]] + list(extra_methods),
                       cfg.ratio, dataset=dataset, config_hash=cfg.hash())
    for rep in reports:
        if rep.method == CASE_OUTPUT[case]:
            rep.method = case
    return trainer, reports
