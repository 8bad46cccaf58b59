"""Model assemblies for sequence and image autoencoding with a code-space GAN.

A ``ModelBundle`` holds five parameter groups: encoder, decoder (one head
per attribute value for transfer models), generator, critic, and an
optional code classifier. Encoder codes are L2-normalized onto the unit
sphere; generator codes pass through a bounded tanh so every component is
strictly inside (-1, 1).
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffmath as dm
from . import nn
from .data import PAD, SOS, EOS
from .diffmath import ContractError, DiffNode


class ConfigurationError(ValueError):
    pass


@dataclass
class Architecture:
    mode: str  # "text" | "image"
    code_dim: int
    z_dim: int
    gen_hidden: list
    critic_hidden: list
    # text fields
    vocab_size: int = 0
    emb_dim: int = 0
    hidden_dim: int = 0
    num_heads: int = 1
    max_train_len: int = 0
    # image fields
    n_pixels: int = 0
    enc_hidden: list = field(default_factory=list)
    dec_hidden: list = field(default_factory=list)
    # classifier (transfer mode)
    cls_hidden: list = field(default_factory=list)
    num_classes: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class CodeVector:
    values: np.ndarray
    source: str  # "encoder" | "generator"


@dataclass
class DecoderHead:
    cell: nn.LstmCell
    out: nn.AffineLayer

    def params(self):
        return self.cell.params() + self.out.params()


class ModelBundle:
    """All parameter groups plus the architecture descriptor."""

    def __init__(self, arch, rng, dtype=np.float32):
        self.arch = arch
        self.dtype = dtype
        d = arch.code_dim
        if arch.mode == "text":
            self.emb_enc = nn.Embedding(arch.vocab_size, arch.emb_dim, rng, dtype)
            self.enc_cell = nn.LstmCell(arch.emb_dim, arch.hidden_dim, rng, dtype)
            if arch.hidden_dim != d:
                raise ConfigurationError("text code_dim must equal encoder hidden_dim")
            self.emb_dec = nn.Embedding(arch.vocab_size, arch.emb_dim, rng, dtype)
            self.dec_heads = [
                DecoderHead(nn.LstmCell(arch.emb_dim + d, arch.hidden_dim, rng, dtype),
                            nn.AffineLayer(arch.hidden_dim, arch.vocab_size, rng, dtype))
                for _ in range(arch.num_heads)]
        elif arch.mode == "image":
            dims = [arch.n_pixels] + list(arch.enc_hidden) + [d]
            self.enc_layers = [nn.AffineLayer(a, b, rng, dtype)
                               for a, b in zip(dims[:-1], dims[1:])]
            ddims = [d] + list(arch.dec_hidden) + [arch.n_pixels]
            self.dec_layers = [nn.AffineLayer(a, b, rng, dtype)
                               for a, b in zip(ddims[:-1], ddims[1:])]
        else:
            raise ConfigurationError(f"unknown mode {arch.mode!r}")
        gdims = [arch.z_dim] + list(arch.gen_hidden) + [d]
        self.gen_layers = [nn.AffineLayer(a, b, rng, dtype)
                           for a, b in zip(gdims[:-1], gdims[1:])]
        self.gen_bns = [nn.BatchNorm(h, dtype=dtype) for h in arch.gen_hidden] + [None]
        cdims = [d] + list(arch.critic_hidden) + [1]
        self.critic_layers = [nn.AffineLayer(a, b, rng, dtype)
                              for a, b in zip(cdims[:-1], cdims[1:])]
        self.cls_layers = None
        if arch.num_classes:
            kdims = [d] + list(arch.cls_hidden) + [arch.num_classes]
            self.cls_layers = [nn.AffineLayer(a, b, rng, dtype)
                               for a, b in zip(kdims[:-1], kdims[1:])]

    # -- parameter groups ---------------------------------------------------

    def encoder_params(self):
        if self.arch.mode == "text":
            return self.emb_enc.params() + self.enc_cell.params()
        return [p for layer in self.enc_layers for p in layer.params()]

    def decoder_params(self):
        if self.arch.mode == "text":
            ps = self.emb_dec.params()
            for head in self.dec_heads:
                ps += head.params()
            return ps
        return [p for layer in self.dec_layers for p in layer.params()]

    def generator_params(self):
        ps = [p for layer in self.gen_layers for p in layer.params()]
        for bn in self.gen_bns:
            if bn is not None:
                ps += bn.params()
        return ps

    def critic_params(self):
        return [p for layer in self.critic_layers for p in layer.params()]

    def classifier_params(self):
        if self.cls_layers is None:
            raise ConfigurationError("bundle has no code classifier")
        return [p for layer in self.cls_layers for p in layer.params()]

    def all_params(self):
        ps = self.encoder_params() + self.decoder_params() + \
            self.generator_params() + self.critic_params()
        if self.cls_layers is not None:
            ps += self.classifier_params()
        return ps

    def named_tensors(self):
        """Stable (name, array) listing of all parameters and buffers."""
        out = []
        groups = [("enc", self.encoder_params()), ("dec", self.decoder_params()),
                  ("gen", self.generator_params()), ("cri", self.critic_params())]
        if self.cls_layers is not None:
            groups.append(("cls", self.classifier_params()))
        for tag, params in groups:
            for i, p in enumerate(params):
                out.append((f"{tag}.{i}", p.value))
        for i, bn in enumerate(self.gen_bns):
            if bn is not None:
                out.append((f"gen.bn{i}.mean", bn.running_mean))
                out.append((f"gen.bn{i}.var", bn.running_var))
        return out


# ---------------------------------------------------------------------------
# encoding


def encode_sequence(bundle, tokens, lengths=None):
    """Final LSTM hidden state per sequence, unit-normalized.

    ``tokens``: (batch, max_len) PAD-padded index matrix, or a single list.
    Returns the code DiffNode of shape (batch, code_dim).
    """
    single = isinstance(tokens, (list, tuple))
    if single:
        if len(tokens) == 0:
            raise ContractError("cannot encode an empty sequence")
        tokens = np.asarray([tokens], dtype=np.int64)
    tokens = np.asarray(tokens)
    if lengths is None:
        lengths = (tokens != PAD).sum(axis=1)
    lengths = np.asarray(lengths)
    if np.any(lengths < 1):
        raise ContractError("cannot encode an empty sequence")
    if tokens.max(initial=0) >= bundle.arch.vocab_size:
        raise IndexError("token index exceeds vocabulary size")
    batch, max_len = tokens.shape
    h, c = bundle.enc_cell.zero_state(batch, bundle.dtype)
    final = None
    for t in range(int(lengths.max())):
        x_t = bundle.emb_enc.forward(tokens[:, t])
        h, c = bundle.enc_cell.step(x_t, h, c)
        sel = (lengths - 1 == t).astype(bundle.dtype)[:, None]
        if sel.any():
            picked = dm.mul(h, sel)
            final = picked if final is None else dm.add(final, picked)
    return dm.l2_normalize_rows(final)


def encode_image(bundle, pixels):
    pixels = np.asarray(pixels, dtype=bundle.dtype)
    if pixels.ndim == 1:
        pixels = pixels[None, :]
    if not np.all((pixels == 0) | (pixels == 1)):
        raise ContractError("image encoder expects binary pixels")
    h = nn.mlp_forward(bundle.enc_layers, DiffNode(pixels), activation=dm.relu)
    return dm.l2_normalize_rows(h)


def add_code_noise(code, sigma, rng):
    """Gaussian perturbation of the decoder input; training-time only."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return code
    v = dm.value_of(code)
    noise = rng.normal(v.shape, dtype=v.dtype) * np.asarray(sigma, dtype=v.dtype)
    return dm.add(code, DiffNode(noise))


# ---------------------------------------------------------------------------
# sequence decoding


def _select_head(bundle, head):
    if head >= len(bundle.dec_heads):
        raise ConfigurationError(
            f"decoder has {len(bundle.dec_heads)} head(s); requested head {head}")
    return bundle.dec_heads[head]


def decode_sequence_loss(bundle, code, tokens, lengths=None, head=0):
    """Teacher-forced NLL: sum over steps, mean over the batch.

    Step 1 input is SOS; the code is concatenated to the LSTM input at
    every step; loss contributions stop after each sequence's EOS.
    """
    dhead = _select_head(bundle, head)
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if lengths is None:
        lengths = (tokens != PAD).sum(axis=1)
    lengths = np.asarray(lengths)
    batch, max_len = tokens.shape
    code = dm.as_node(code)
    h, c = dhead.cell.zero_state(batch, bundle.dtype)
    prev = np.full(batch, SOS, dtype=np.int64)
    total = None
    for t in range(int(lengths.max())):
        emb = bundle.emb_dec.forward(prev)
        x_t = dm.concat_cols(emb, code)
        h, c = dhead.cell.step(x_t, h, c)
        logits = dhead.out.forward(h)
        weights = (t < lengths).astype(bundle.dtype)
        # masked rows still need an in-range target index
        targets = np.where(t < lengths, tokens[:, t], EOS)
        step_loss, _ = dm.softmax_cross_entropy(logits, targets, weights=weights)
        total = step_loss if total is None else dm.add(total, step_loss)
        prev = targets
    return total


def _decode_rollout(bundle, code_values, head, max_len, pick):
    """Shared greedy/stochastic rollout; ``pick(probs_row) -> token``."""
    dhead = _select_head(bundle, head)
    code_values = np.asarray(dm.value_of(code_values))
    if code_values.ndim == 1:
        code_values = code_values[None, :]
    batch = code_values.shape[0]
    code = DiffNode(code_values)
    h, c = dhead.cell.zero_state(batch, bundle.dtype)
    prev = np.full(batch, SOS, dtype=np.int64)
    done = np.zeros(batch, dtype=bool)
    out = [[] for _ in range(batch)]
    for _ in range(max_len):
        emb = bundle.emb_dec.forward(prev)
        x_t = dm.concat_cols(emb, code)
        h, c = dhead.cell.step(x_t, h, c)
        logits = dhead.out.forward(h).value
        probs = dm.softmax(logits)
        nxt = np.empty(batch, dtype=np.int64)
        for i in range(batch):
            nxt[i] = EOS if done[i] else pick(probs[i], logits[i])
        for i in range(batch):
            if not done[i]:
                if nxt[i] == EOS:
                    done[i] = True
                else:
                    out[i].append(int(nxt[i]))
        if done.all():
            break
        prev = nxt
    return out


def decode_sequence_greedy(bundle, code, head=0, max_len=None):
    """Argmax decoding, ties to the lowest index; content tokens, no EOS."""
    if max_len is None:
        max_len = max(2 * bundle.arch.max_train_len, 4)
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return _decode_rollout(bundle, code, head, max_len,
                           lambda p, lg: int(np.argmax(lg)))


def decode_sequence_sample(bundle, code, rng, head=0, max_len=None, temperature=1.0):
    """Per-step multinomial sampling from the decoder softmax."""
    if max_len is None:
        max_len = max(2 * bundle.arch.max_train_len, 4)

    def pick(p, lg):
        if temperature != 1.0:
            lp = lg / temperature
            p = dm.softmax(lp[None, :])[0]
        u = rng.random()
        return int(min(np.searchsorted(np.cumsum(p), u), len(p) - 1))
    return _decode_rollout(bundle, code, head, max_len, pick)


# ---------------------------------------------------------------------------
# image decoding


def decode_image_loss(bundle, code, pixels):
    pixels = np.asarray(pixels, dtype=bundle.dtype)
    if pixels.ndim == 1:
        pixels = pixels[None, :]
    if not np.all((pixels == 0) | (pixels == 1)):
        raise ContractError("image decoder expects binary pixel targets")
    logits = nn.mlp_forward(bundle.dec_layers, dm.as_node(code), activation=dm.relu)
    return dm.sigmoid_cross_entropy(logits, pixels)


def decode_image(bundle, code):
    """Per-pixel Bernoulli probabilities; threshold at 0.5 to generate."""
    logits = nn.mlp_forward(bundle.dec_layers, dm.as_node(code), activation=dm.relu)
    v = logits.value
    return np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                    np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))


# ---------------------------------------------------------------------------
# generator / critic / classifier


def generate_code(bundle, z, mode="train", update_running=True):
    """MLP with batchnorm+ReLU hidden layers and a bounded tanh output."""
    v = np.asarray(dm.value_of(z), dtype=bundle.dtype)
    if v.ndim == 1:
        v = v[None, :]
    z = DiffNode(v)
    return nn.mlp_forward(bundle.gen_layers, z, activation=dm.relu,
                          batchnorms=bundle.gen_bns, mode=mode,
                          update_running=update_running,
                          final_activation=dm.bounded_tanh)


def critic_score(bundle, code):
    """Unbounded scalar per code row, shape (batch, 1)."""
    return nn.mlp_forward(bundle.critic_layers, dm.as_node(code), activation=dm.relu)


def classifier_logits(bundle, code):
    if bundle.cls_layers is None:
        raise ConfigurationError("bundle has no code classifier")
    return nn.mlp_forward(bundle.cls_layers, dm.as_node(code), activation=dm.relu)


def classify_code(bundle, code):
    """Softmax attribute probabilities per code row."""
    return dm.softmax(classifier_logits(bundle, code).value)
