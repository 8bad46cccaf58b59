"""Corpora, vocabulary, batching, and the synthetic attribute grammar.

Text corpora are one whitespace-tokenized, lowercased sentence per line.
Attribute corpora are a directory of ``<attr>.txt`` files, one per label.
Binary images use either the "BIMG" packed format (magic, u32 count,
u32 n, bits packed row-major) or a CSV of 0/1 values.
"""

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .diffmath import ContractError

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ["<pad>", "<sos>", "<eos>", "<unk>"]


class Vocabulary:
    """token <-> index map with reserved indices 0..3 and a stable hash."""

    def __init__(self, tokens, min_count=1):
        self.min_count = min_count
        self.itos = list(RESERVED) + list(tokens)
        if len(set(self.itos)) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def index(self, token):
        return self.stoi.get(token, UNK)

    def token(self, idx):
        return self.itos[idx]

    def encode(self, words):
        return [self.index(w) for w in words]

    def decode(self, indices, drop_reserved=True):
        toks = [self.itos[i] for i in indices]
        if drop_reserved:
            toks = [t for t in toks if t not in RESERVED]
        return toks

    def content_hash(self):
        h = hashlib.sha256("\n".join(self.itos).encode("utf-8")).digest()
        return int.from_bytes(h[:8], "little")

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.itos:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            toks = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if toks[:4] != RESERVED:
            raise ValueError(f"vocabulary file {path} missing reserved header")
        return cls(toks[4:])


def build_vocab(lines, min_count=1):
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = {}
    any_token = False
    for line in lines:
        for tok in line.lower().split():
            any_token = True
            counts[tok] = counts.get(tok, 0) + 1
    if not any_token:
        raise ContractError("cannot build a vocabulary from empty input")
    kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept, min_count=min_count)


@dataclass
class SequenceCorpus:
    sequences: list  # each a list of indices ending in EOS
    labels: list = None  # optional per-sequence attribute value
    max_len: int = 0
    dropped: int = 0
    vocab: Vocabulary = None

    def __post_init__(self):
        if self.sequences and not self.max_len:
            self.max_len = max(len(s) for s in self.sequences)

    def __len__(self):
        return len(self.sequences)

    def num_attributes(self):
        return 0 if self.labels is None else len(set(self.labels))

    def subset(self, indices):
        return SequenceCorpus(
            [self.sequences[i] for i in indices],
            None if self.labels is None else [self.labels[i] for i in indices],
            vocab=self.vocab)


@dataclass
class ImageCorpus:
    images: np.ndarray  # (count, n) of 0/1 floats

    def __len__(self):
        return len(self.images)

    @property
    def n_pixels(self):
        return self.images.shape[1]


def encode_line(line, vocab, append_eos=True):
    idx = vocab.encode(line.lower().split())
    if append_eos:
        idx.append(EOS)
    return idx


def load_text_corpus(path, vocab, max_len=15, label=None):
    """One sentence per line; sentences longer than max_len are dropped."""
    sequences, dropped = [], 0
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot read corpus file {path}: {exc}") from exc
    with fh:
        for line in fh:
            words = line.lower().split()
            if not words:
                continue
            if len(words) > max_len:
                dropped += 1
                continue
            sequences.append(vocab.encode(words) + [EOS])
    labels = None if label is None else [label] * len(sequences)
    return SequenceCorpus(sequences, labels, dropped=dropped, vocab=vocab)


def load_attribute_corpus(paths_by_label, vocab, max_len=15):
    """paths_by_label: {label int: path}; concatenates with per-file labels."""
    sequences, labels, dropped = [], [], 0
    for label in sorted(paths_by_label):
        part = load_text_corpus(paths_by_label[label], vocab, max_len, label=label)
        sequences.extend(part.sequences)
        labels.extend(part.labels)
        dropped += part.dropped
    return SequenceCorpus(sequences, labels, dropped=dropped, vocab=vocab)


# ---------------------------------------------------------------------------
# binary images

BIMG_MAGIC = b"BIMG"


def save_binary_images(path, images):
    images = np.asarray(images)
    count, n = images.shape
    packed = np.packbits(images.astype(np.uint8), axis=None)
    with open(path, "wb") as fh:
        fh.write(BIMG_MAGIC)
        fh.write(np.uint32(count).tobytes())
        fh.write(np.uint32(n).tobytes())
        fh.write(packed.tobytes())


def load_binary_images(path):
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == BIMG_MAGIC:
            meta = fh.read(8)
            if len(meta) < 8:
                raise ValueError(f"truncated BIMG header in {path}")
            count = int(np.frombuffer(meta[:4], np.uint32)[0])
            n = int(np.frombuffer(meta[4:], np.uint32)[0])
            nbytes = (count * n + 7) // 8
            raw = fh.read()
            if len(raw) < nbytes:
                raise ValueError(f"truncated BIMG payload in {path}")
            bits = np.unpackbits(np.frombuffer(raw, np.uint8), count=count * n)
            return ImageCorpus(bits.reshape(count, n).astype(np.float32))
    # fall through: CSV of 0/1
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            vals = [v.strip() for v in line.split(",")]
            if any(v not in ("0", "1") for v in vals):
                raise ValueError(f"non-binary pixel value in {path}")
            rows.append([int(v) for v in vals])
    if not rows:
        raise ValueError(f"no image rows in {path}")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"ragged CSV image rows in {path}")
    return ImageCorpus(np.asarray(rows, dtype=np.float32))


# ---------------------------------------------------------------------------
# synthetic attribute grammar

GRAMMAR_LEXICONS = {
    "sentiment": {
        "adj": [["good", "great", "fine"], ["bad", "awful", "poor"]],
        "noun": ["dog", "cat", "movie", "book", "pizza", "day"],
        "verb": ["made", "ruined", "was", "seemed", "felt"],
        "adv": ["really", "very"],
    },
}

_TEMPLATE_RE = {
    "sentiment": re.compile(
        r"^(the )?((really|very) )?(good|great|fine|bad|awful|poor) "
        r"(dog|cat|movie|book|pizza|day) (made|ruined|was|seemed|felt) "
        r"the (dog|cat|movie|book|pizza|day)( (really|very))?$"),
}


def grammar_vocab(grammar_id="sentiment"):
    lex = GRAMMAR_LEXICONS[grammar_id]
    words = ["the"] + lex["adj"][0] + lex["adj"][1] + lex["noun"] + lex["verb"] + lex["adv"]
    return build_vocab([" ".join(words)], min_count=1)


def template_regex(grammar_id="sentiment"):
    return _TEMPLATE_RE[grammar_id]


def synth_sentence(grammar_id, label, rng):
    lex = GRAMMAR_LEXICONS[grammar_id]
    words = []
    if rng.random() < 0.5:
        words.append("the")
    if rng.random() < 0.3:
        words.append(rng.choice(lex["adv"]))
    words.append(rng.choice(lex["adj"][label]))
    words.append(rng.choice(lex["noun"]))
    words.append(rng.choice(lex["verb"]))
    words.append("the")
    words.append(rng.choice(lex["noun"]))
    if len(words) < 8 and rng.random() < 0.3:
        words.append(rng.choice(lex["adv"]))
    return words


def synth_corpus(grammar_id, size, rng, vocab=None):
    """Balanced labeled corpus from the built-in template grammar."""
    if grammar_id not in GRAMMAR_LEXICONS:
        raise ValueError(f"unknown grammar id {grammar_id!r}")
    vocab = vocab or grammar_vocab(grammar_id)
    sequences, labels = [], []
    for i in range(size):
        label = i % 2
        words = synth_sentence(grammar_id, label, rng)
        sequences.append(vocab.encode(words) + [EOS])
        labels.append(label)
    return SequenceCorpus(sequences, labels, vocab=vocab)


def sentence_label(words, grammar_id="sentiment"):
    """Recover the attribute from lexicon membership; None if absent."""
    lex = GRAMMAR_LEXICONS[grammar_id]["adj"]
    for w in words:
        if w in lex[0]:
            return 0
        if w in lex[1]:
            return 1
    return None


# ---------------------------------------------------------------------------
# batching


def pad_batch(sequences, dtype=np.int64):
    """Pack sequences into a PAD-padded matrix plus lengths."""
    batch = len(sequences)
    max_len = max(len(s) for s in sequences)
    out = np.full((batch, max_len), PAD, dtype=dtype)
    lengths = np.empty(batch, dtype=dtype)
    for i, s in enumerate(sequences):
        out[i, :len(s)] = s
        lengths[i] = len(s)
    return out, lengths


def batch_iterator(corpus, batch_size, rng, drop_last=False):
    """Seeded shuffle each call; yields (tokens, lengths, labels)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(corpus)))
    rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if drop_last and len(idx) < batch_size:
            return
        seqs = [corpus.sequences[i] for i in idx]
        tokens, lengths = pad_batch(seqs)
        labels = None
        if corpus.labels is not None:
            labels = np.asarray([corpus.labels[i] for i in idx], dtype=np.int64)
        yield tokens, lengths, labels


def image_batch_iterator(corpus, batch_size, rng, drop_last=False):
    order = list(range(len(corpus)))
    rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if drop_last and len(idx) < batch_size:
            return
        yield corpus.images[idx]
