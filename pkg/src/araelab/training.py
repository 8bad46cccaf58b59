"""Training loops: reconstruction, critic, adversarial, and transfer phases.

One outer iteration is: one reconstruction step, then ``gan_loops`` rounds
of (k critic steps + one encoder/generator step); transfer mode appends a
classifier step and an encoder-vs-classifier step to each round. The
critic is weight-clipped to [-eps, eps] after every update. Encoder and
decoder use plain SGD by default (Adam for the image preset); generator,
critic, and classifier use Adam.
"""

import json
import math
import os
import struct
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import diffmath as dm
from . import models
from .data import SequenceCorpus, ImageCorpus, Vocabulary, pad_batch, batch_iterator, image_batch_iterator
from .diffmath import DiffNode
from .models import Architecture, ModelBundle, ConfigurationError
from .rng import SeededRng


class TrainingDiverged(RuntimeError):
    def __init__(self, phase, value):
        super().__init__(f"non-finite loss in {phase}: {value}")
        self.phase = phase


class CheckpointFormatError(ValueError):
    pass


class CheckpointCorruptionError(ValueError):
    pass


class ArchitectureMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    clip_eps: float = 0.01
    critic_iters: int = 5
    gan_loops_init: int = 1
    gan_schedule: list = field(default_factory=lambda: [2, 4, 6])
    lr_ae: float = 1.0
    lr_gen: float = 5e-5
    lr_critic: float = 1e-5
    lr_cls: float = 0.1
    ae_optimizer: str = "sgd"
    cls_optimizer: str = "sgd"
    lr_enc_adv: float = None  # phase-3 encoder SGD rate; defaults to lr_ae
    gan_lr_decay: float = 1.0  # per-epoch decay on generator/critic rates
    gan_lr_decay_start: int = 2  # first epoch the decay applies
    noise_sigma: float = 0.2
    noise_decay: float = 0.995
    noise_decay_every: int = 100
    batch_size: int = 64
    epochs: int = 5
    seed: int = 1
    grad_clip: float = 1.0
    log_every: int = 50
    transfer: bool = False
    adam_beta1: float = 0.9
    gan_adam_beta1: float = 0.9  # momentum for generator/critic Adam
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be > 0")
        if self.critic_iters < 1:
            raise ValueError("critic_iters must be >= 1")
        for name in ("lr_ae", "lr_gen", "lr_critic", "lr_cls"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not (0 < self.noise_decay <= 1):
            raise ValueError("noise_decay must be in (0, 1]")
        return self


def ae_baseline_config(config):
    """Pure-reconstruction ablation: no adversarial term, no GAN loops."""
    return replace(config, lambda1=0.0, gan_loops_init=0, gan_schedule=[])


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.value -= (self.lr * p.grad).astype(p.value.dtype)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.value -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.value.dtype)


def make_optimizer(kind, params, lr, config):
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    raise ValueError(f"unknown optimizer {kind!r}")


def clip_grad_norm(params, max_norm):
    """Scale gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= np.asarray(factor, dtype=p.grad.dtype)
    return norm


def clamp_critic(bundle, eps):
    for p in bundle.critic_params():
        np.clip(p.value, -eps, eps, out=p.value)


def _check_finite(name, value):
    if not np.isfinite(value):
        raise TrainingDiverged(name, value)
    return float(value)


def sample_batch(corpus, m, rng):
    idx = [rng.randbelow(len(corpus)) for _ in range(m)]
    if isinstance(corpus, ImageCorpus):
        return corpus.images[idx]
    seqs = [corpus.sequences[i] for i in idx]
    tokens, lengths = pad_batch(seqs)
    labels = None
    if corpus.labels is not None:
        labels = np.asarray([corpus.labels[i] for i in idx], dtype=np.int64)
    return tokens, lengths, labels


def sample_latent(config_or_bundle, m, rng, z_dim=None, dtype=np.float32):
    if z_dim is None:
        z_dim = config_or_bundle.arch.z_dim
    return rng.normal((m, z_dim), dtype=dtype)


# ---------------------------------------------------------------------------
# phases


class TrainerState:
    """Optimizers and schedules shared across phase calls."""

    def __init__(self, bundle, config):
        self.bundle = bundle
        self.config = config
        ae_params = bundle.encoder_params() + bundle.decoder_params()
        self.opt_ae = make_optimizer(config.ae_optimizer, ae_params, config.lr_ae, config)
        # adversarial encoder steps are plain SGD so the lambda weights scale
        # the update magnitude (a scale-invariant optimizer would undo them)
        lr_adv = config.lr_enc_adv if config.lr_enc_adv is not None else config.lr_ae
        self.opt_enc = SGD(bundle.encoder_params(), lr_adv)
        # low/zero momentum keeps the clipped-critic game from cycling
        self.opt_gen = Adam(bundle.generator_params(), config.lr_gen,
                            config.gan_adam_beta1, config.adam_beta2,
                            config.adam_eps)
        self.opt_critic = Adam(bundle.critic_params(), config.lr_critic,
                               config.gan_adam_beta1, config.adam_beta2,
                               config.adam_eps)
        self.opt_cls = None
        if bundle.cls_layers is not None:
            self.opt_cls = make_optimizer(config.cls_optimizer, bundle.classifier_params(),
                                          config.lr_cls, config)
        self.sigma = config.noise_sigma
        self.iteration = 0
        self.last_c = None
        self.last_cg = None


def _encode_batch(bundle, batch):
    if bundle.arch.mode == "text":
        tokens, lengths, _ = batch
        return models.encode_sequence(bundle, tokens, lengths)
    return models.encode_image(bundle, batch)


def _encode_batch_detached(bundle, batch):
    return DiffNode(_encode_batch(bundle, batch).value.copy())


def phase1_reconstruction(bundle, batch, config, state, rng):
    """One autoencoder step: encode, add code noise, decode, SGD update."""
    params = bundle.encoder_params() + bundle.decoder_params()
    dm.zero_grads(params)
    code = _encode_batch(bundle, batch)
    noisy = models.add_code_noise(code, state.sigma, rng)
    if bundle.arch.mode == "text":
        tokens, lengths, labels = batch
        head = int(labels[0]) if (config.transfer and labels is not None) else 0
        loss = models.decode_sequence_loss(bundle, noisy, tokens, lengths, head=head)
    else:
        loss = models.decode_image_loss(bundle, noisy, batch)
    value = _check_finite("phase1_reconstruction", loss.value)
    dm.backward(loss)
    clip_grad_norm(params, config.grad_clip)
    state.opt_ae.step()
    state.last_c = code.value
    return value


def phase2_critic(bundle, corpus, config, state, rng):
    """k critic updates; encoder codes are a fixed input source here."""
    w_est = 0.0
    for _ in range(config.critic_iters):
        batch = sample_batch(corpus, config.batch_size, rng)
        z = sample_latent(bundle, config.batch_size, rng)
        c = _encode_batch_detached(bundle, batch)
        cg = models.generate_code(bundle, z, mode="train", update_running=False)
        f_real = dm.mean_all(models.critic_score(bundle, c))
        f_fake = dm.mean_all(models.critic_score(bundle, cg))
        loss = dm.add(dm.neg(f_real), f_fake)
        _check_finite("phase2_critic", loss.value)
        dm.zero_grads(bundle.critic_params())
        dm.backward(loss)
        state.opt_critic.step()
        clamp_critic(bundle, config.clip_eps)
        dm.zero_grads(bundle.generator_params())
        w_est = float(f_real.value - f_fake.value)
        state.last_cg = cg.value
    return w_est


def phase3_encoder_generator(bundle, corpus, config, state, rng):
    """Adversarial step for encoder (scaled by lambda1) and generator."""
    batch = sample_batch(corpus, config.batch_size, rng)
    z = sample_latent(bundle, config.batch_size, rng)
    enc_params = bundle.encoder_params()
    gen_params = bundle.generator_params()
    dm.zero_grads(enc_params)
    dm.zero_grads(gen_params)
    c = _encode_batch(bundle, batch)
    cg = models.generate_code(bundle, z, mode="train", update_running=True)
    f_real = dm.mean_all(models.critic_score(bundle, c))
    f_fake = dm.mean_all(models.critic_score(bundle, cg))
    # minimize f(c) - f(c~); encoder path carries the lambda1 weight
    loss = dm.add(dm.scale(f_real, config.lambda1), dm.neg(f_fake))
    _check_finite("phase3_encoder_generator", loss.value)
    dm.backward(loss)
    clip_grad_norm(enc_params, config.grad_clip)
    state.opt_enc.step()
    state.opt_gen.step()
    dm.zero_grads(bundle.critic_params())
    state.last_c = c.value
    state.last_cg = cg.value
    return float(f_real.value - f_fake.value)


def phase2b_classifier(bundle, batch, config, state):
    """Classifier step on detached codes; encoder untouched."""
    tokens, lengths, labels = batch
    if labels is None:
        raise dm.ContractError("classifier phase needs labeled batches")
    c = _encode_batch_detached(bundle, batch)
    logits = models.classifier_logits(bundle, c)
    loss, _ = dm.softmax_cross_entropy(logits, labels)
    value = _check_finite("phase2b_classifier", loss.value)
    dm.zero_grads(bundle.classifier_params())
    dm.backward(loss)
    state.opt_cls.step()
    return value


def phase3b_encoder_vs_classifier(bundle, batch, config, state):
    """Encoder step toward the flipped label; classifier frozen."""
    tokens, lengths, labels = batch
    if labels is None:
        raise dm.ContractError("adversarial classifier phase needs labeled batches")
    if bundle.arch.num_classes != 2:
        raise ConfigurationError(
            "the label-flip adversarial loss is defined for binary attributes only")
    enc_params = bundle.encoder_params()
    dm.zero_grads(enc_params)
    c = _encode_batch(bundle, batch)
    logits = models.classifier_logits(bundle, c)
    loss, _ = dm.softmax_cross_entropy(logits, 1 - labels)
    loss = dm.scale(loss, config.lambda2)
    value = _check_finite("phase3b_encoder_vs_classifier", loss.value)
    if config.lambda2 != 0:
        dm.backward(loss)
        clip_grad_norm(enc_params, config.grad_clip)
        state.opt_enc.step()
        dm.zero_grads(bundle.classifier_params())
    return value


# ---------------------------------------------------------------------------
# full loop

LOG_FIELDS = ("epoch", "step", "l_rec", "w_est", "cls_loss",
              "c_norm", "cg_norm", "c_var", "cg_var")


def _code_stats(values):
    if values is None:
        return 0.0, 0.0
    norms = np.linalg.norm(values, axis=1)
    var_trace = values.var(axis=0).sum()
    return float(norms.mean()), float(var_trace)


def make_log_record(epoch, step, l_rec, w_est, cls_loss, state):
    c_norm, c_var = _code_stats(state.last_c)
    cg_norm, cg_var = _code_stats(state.last_cg)
    return {"epoch": epoch, "step": step, "l_rec": l_rec, "w_est": w_est,
            "cls_loss": cls_loss, "c_norm": c_norm, "cg_norm": cg_norm,
            "c_var": c_var, "cg_var": cg_var}


def write_log(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=False) + "\n")


def _phase1_batches(corpus, config, rng):
    """Reconstruction batches; transfer mode alternates single-class batches."""
    if isinstance(corpus, ImageCorpus):
        yield from image_batch_iterator(corpus, config.batch_size, rng)
        return
    if not config.transfer or corpus.labels is None:
        yield from batch_iterator(corpus, config.batch_size, rng)
        return
    classes = sorted(set(corpus.labels))
    parts = [corpus.subset([i for i, y in enumerate(corpus.labels) if y == cls])
             for cls in classes]
    iters = [batch_iterator(p, config.batch_size, rng) for p in parts]
    alive = list(range(len(iters)))
    while alive:
        for ci in list(alive):
            try:
                yield next(iters[ci])
            except StopIteration:
                alive.remove(ci)


def run_training(corpus, config, arch, out_dir=None, bundle=None, callback=None):
    """Train a bundle; returns (bundle, log records).

    ``callback(bundle, epoch, step, phase)`` if given runs after each phase,
    for invariant monitoring in tests.
    """
    config.validate()
    if len(corpus) == 0:
        raise ValueError("dataset is empty")
    rng = SeededRng(config.seed)
    init_rng, data_rng, noise_rng, gan_rng = (rng.spawn() for _ in range(4))
    if bundle is None:
        bundle = ModelBundle(arch, init_rng)
    state = TrainerState(bundle, config)
    records = []
    gan_loops = config.gan_loops_init
    l_rec = w_est = cls_loss = 0.0
    step = 0
    vocab = getattr(corpus, "vocab", None)
    for epoch in range(1, config.epochs + 1):
        if epoch in config.gan_schedule:
            gan_loops += 1
        if epoch >= config.gan_lr_decay_start and config.gan_lr_decay != 1.0:
            state.opt_gen.lr *= config.gan_lr_decay
            state.opt_critic.lr *= config.gan_lr_decay
        for batch in _phase1_batches(corpus, config, data_rng):
            l_rec = phase1_reconstruction(bundle, batch, config, state, noise_rng)
            if callback:
                callback(bundle, epoch, step, "phase1")
            for _ in range(gan_loops):
                w_est = phase2_critic(bundle, corpus, config, state, gan_rng)
                if callback:
                    callback(bundle, epoch, step, "phase2")
                phase3_encoder_generator(bundle, corpus, config, state, gan_rng)
                if callback:
                    callback(bundle, epoch, step, "phase3")
                if config.transfer:
                    lbatch = sample_batch(corpus, config.batch_size, gan_rng)
                    cls_loss = phase2b_classifier(bundle, lbatch, config, state)
                    if callback:
                        callback(bundle, epoch, step, "phase2b")
                    lbatch = sample_batch(corpus, config.batch_size, gan_rng)
                    phase3b_encoder_vs_classifier(bundle, lbatch, config, state)
                    if callback:
                        callback(bundle, epoch, step, "phase3b")
            state.iteration += 1
            if state.iteration % config.noise_decay_every == 0:
                state.sigma *= config.noise_decay
            if step % config.log_every == 0:
                records.append(make_log_record(epoch, step, l_rec, w_est, cls_loss, state))
            step += 1
        records.append(make_log_record(epoch, step, l_rec, w_est, cls_loss, state))
        if out_dir:
            save_checkpoint(bundle, os.path.join(out_dir, f"epoch{epoch:03d}.arae"),
                            vocab=vocab)
    if out_dir:
        write_log(records, os.path.join(out_dir, "train_log.jsonl"))
    return bundle, records


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"ARAE"
CKPT_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.float32, 1: np.float64}


def save_checkpoint(bundle, path, vocab=None):
    header = {
        "arch": bundle.arch.to_dict(),
        "vocab": vocab.itos if vocab is not None else None,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    vocab_hash = vocab.content_hash() if vocab is not None else 0
    entries = bundle.named_tensors()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<Q", vocab_hash))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            tag = _DTYPE_TAGS[np.dtype(arr.dtype)]
            fh.write(struct.pack("<BB", tag, arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr).astype("<f4" if tag == 0 else "<f8").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointCorruptionError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    """Returns (bundle, vocab or None). Bit-exact round trip with save."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise CheckpointFormatError(f"bad checkpoint magic in {path}")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != CKPT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        vocab_hash = struct.unpack("<Q", _read_exact(fh, 8, "vocab hash"))[0]
        blob_len = struct.unpack("<I", _read_exact(fh, 4, "header length"))[0]
        header = json.loads(_read_exact(fh, blob_len, "header"))
        arch = Architecture.from_dict(header["arch"])
        vocab = None
        if header["vocab"] is not None:
            vocab = Vocabulary(header["vocab"][4:])
            if vocab.content_hash() != vocab_hash:
                raise CheckpointCorruptionError("vocabulary hash mismatch")
        n_entries = struct.unpack("<I", _read_exact(fh, 4, "entry count"))[0]
        loaded = {}
        for _ in range(n_entries):
            name_len = struct.unpack("<H", _read_exact(fh, 2, "name length"))[0]
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            tag, rank = struct.unpack("<BB", _read_exact(fh, 2, "dtype/rank"))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4, "dim"))[0]
                          for _ in range(rank))
            dtype = _TAG_DTYPES.get(tag)
            if dtype is None:
                raise CheckpointFormatError(f"unknown dtype tag {tag}")
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, count * np.dtype(dtype).itemsize, f"data for {name}")
            loaded[name] = np.frombuffer(raw, dtype="<f4" if tag == 0 else "<f8") \
                .astype(dtype).reshape(shape)
    bundle = ModelBundle(arch, SeededRng(0))
    targets = dict(bundle.named_tensors())
    if set(targets) != set(loaded):
        raise CheckpointCorruptionError("checkpoint entries do not match architecture")
    for name, arr in loaded.items():
        if targets[name].shape != arr.shape:
            raise CheckpointCorruptionError(
                f"shape mismatch for {name}: {arr.shape} vs {targets[name].shape}")
    _assign_named_tensors(bundle, loaded)
    return bundle, vocab


def _assign_named_tensors(bundle, loaded):
    groups = [("enc", bundle.encoder_params()), ("dec", bundle.decoder_params()),
              ("gen", bundle.generator_params()), ("cri", bundle.critic_params())]
    if bundle.cls_layers is not None:
        groups.append(("cls", bundle.classifier_params()))
    for tag, params in groups:
        for i, p in enumerate(params):
            p.value = loaded[f"{tag}.{i}"].copy()
    for i, bn in enumerate(bundle.gen_bns):
        if bn is not None:
            bn.running_mean = loaded[f"gen.bn{i}.mean"].copy()
            bn.running_var = loaded[f"gen.bn{i}.var"].copy()
