"""Quantitative evaluations: noising robustness, smoothness, perplexity,
reverse perplexity, transfer metrics, moment diagnostics, and the
semi-supervised probe.

Conventions fixed here: all NLLs are in nats; perplexity counts EOS as a
regular token; BLEU is corpus-level over n-grams 1..4 with add-one
smoothing for zero higher-order counts and the standard brevity penalty.
"""

from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm
from . import models
from . import nn
from .data import EOS, PAD, SequenceCorpus, pad_batch, batch_iterator
from .diffmath import ContractError, DiffNode
from .rng import SeededRng


# ---------------------------------------------------------------------------
# token-level utilities


def edit_distance(a, b):
    """Token-level Levenshtein distance, unit costs."""
    la, lb = len(a), len(b)
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        cur = [i] + [0] * lb
        for j in range(1, lb + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[lb]


def k_swap(tokens, k, rng, pairs=None):
    """Corrupt by k transpositions over disjoint position pairs."""
    tokens = list(tokens)
    if k == 0:
        return tokens
    if 2 * k > len(tokens):
        raise ContractError(f"k_swap needs k <= len/2, got k={k}, len={len(tokens)}")
    if pairs is None:
        positions = list(range(len(tokens)))
        rng.shuffle(positions)
        pairs = [(positions[2 * i], positions[2 * i + 1]) for i in range(k)]
    for i, j in pairs:
        tokens[i], tokens[j] = tokens[j], tokens[i]
    return tokens


def _ngram_counts(tokens, n):
    counts = {}
    for i in range(len(tokens) - n + 1):
        g = tuple(tokens[i:i + n])
        counts[g] = counts.get(g, 0) + 1
    return counts


def corpus_bleu(candidates, references, max_n=4):
    """Corpus-level BLEU in [0, 1]."""
    clipped = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    any_candidate = False
    for cand, ref in zip(candidates, references):
        if not cand:
            continue
        any_candidate = True
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cc = _ngram_counts(cand, n)
            rc = _ngram_counts(ref, n)
            totals[n - 1] += max(len(cand) - n + 1, 0)
            clipped[n - 1] += sum(min(c, rc.get(g, 0)) for g, c in cc.items())
    if not any_candidate:
        return 0.0
    log_sum = 0.0
    for n in range(max_n):
        num, den = clipped[n], totals[n]
        if den == 0:
            num, den = 1, 1  # sentences shorter than n grams contribute neutrally
        elif num == 0 and n > 0:
            num, den = 1, den + 1  # add-one smoothing for higher orders
        elif num == 0:
            return 0.0
        log_sum += np.log(num / den)
    bp = 1.0 if cand_len > ref_len else np.exp(1.0 - ref_len / max(cand_len, 1))
    return float(bp * np.exp(log_sum / max_n))


def bleu(candidate, reference):
    if not candidate:
        return 0.0
    return corpus_bleu([candidate], [reference])


# ---------------------------------------------------------------------------
# language model, perplexity, reverse perplexity


@dataclass
class LmConfig:
    emb_dim: int = 24
    hidden_dim: int = 48
    lr: float = 1.0
    epochs: int = 8
    batch_size: int = 32
    seed: int = 11
    grad_clip: float = 1.0


class LanguageModel:
    """Embedding + one-layer LSTM + softmax head, trained by SGD."""

    def __init__(self, vocab_size, config, rng=None):
        rng = rng or SeededRng(config.seed)
        self.vocab_size = vocab_size
        self.config = config
        self.emb = nn.Embedding(vocab_size, config.emb_dim, rng)
        self.cell = nn.LstmCell(config.emb_dim, config.hidden_dim, rng)
        self.out = nn.AffineLayer(config.hidden_dim, vocab_size, rng)

    def params(self):
        return self.emb.params() + self.cell.params() + self.out.params()

    def batch_loss(self, tokens, lengths):
        """Summed NLL over the batch plus the token count (EOS included)."""
        from .data import SOS
        batch, _ = tokens.shape
        h, c = self.cell.zero_state(batch)
        prev = np.full(batch, SOS, dtype=np.int64)
        total = None
        n_tokens = int(lengths.sum())
        for t in range(int(lengths.max())):
            x_t = self.emb.forward(prev)
            h, c = self.cell.step(x_t, h, c)
            logits = self.out.forward(h)
            weights = (t < lengths).astype(np.float32)
            targets = np.where(t < lengths, tokens[:, t], EOS)
            step_loss, _ = dm.softmax_cross_entropy(logits, targets,
                                                    weights=weights, reduction="sum")
            total = step_loss if total is None else dm.add(total, step_loss)
            prev = targets
        return total, n_tokens


def train_lm(corpus, config, vocab_size=None):
    if len(corpus) == 0:
        raise ContractError("cannot train a language model on an empty corpus")
    if vocab_size is None:
        vocab_size = len(corpus.vocab) if corpus.vocab is not None else \
            max(max(s) for s in corpus.sequences) + 1
    rng = SeededRng(config.seed)
    lm = LanguageModel(vocab_size, config, rng)
    from .training import SGD, clip_grad_norm
    opt = SGD(lm.params(), config.lr)
    data_rng = rng.spawn()
    for _ in range(config.epochs):
        for tokens, lengths, _ in batch_iterator(corpus, config.batch_size, data_rng):
            dm.zero_grads(lm.params())
            loss, n_tok = lm.batch_loss(tokens, lengths)
            scaled = dm.scale(loss, 1.0 / n_tok)
            dm.backward(scaled)
            clip_grad_norm(lm.params(), config.grad_clip)
            opt.step()
    return lm


def corpus_nll(lm, corpus, batch_size=128):
    total_nll = 0.0
    total_tok = 0
    for start in range(0, len(corpus), batch_size):
        seqs = corpus.sequences[start:start + batch_size]
        tokens, lengths = pad_batch(seqs)
        loss, n_tok = lm.batch_loss(tokens, lengths)
        total_nll += float(loss.value)
        total_tok += n_tok
    return total_nll, total_tok


def perplexity(lm, corpus):
    """exp(total NLL / total tokens), EOS counted."""
    if len(corpus) == 0:
        raise ContractError("cannot compute perplexity on an empty corpus")
    nll, n_tok = corpus_nll(lm, corpus)
    return float(np.exp(nll / n_tok))


@dataclass
class ReversePplResult:
    ppl: float
    distinct_ratio: float
    mode_collapse_suspect: bool


def reverse_ppl(samples, real_heldout, lm_config, vocab_size, min_samples=50):
    """Train a fresh LM on generated samples; measure PPL on real data.

    ``samples``: list of token sequences (without EOS; it is appended).
    """
    if len(samples) < min_samples:
        raise ContractError(f"reverse_ppl needs >= {min_samples} samples")
    distinct = len({tuple(s) for s in samples})
    ratio = distinct / len(samples)
    seqs = [list(s) + [EOS] for s in samples]
    sample_corpus = SequenceCorpus(seqs, vocab=real_heldout.vocab)
    lm = train_lm(sample_corpus, lm_config, vocab_size=vocab_size)
    return ReversePplResult(ppl=perplexity(lm, real_heldout),
                            distinct_ratio=ratio,
                            mode_collapse_suspect=ratio < 0.01)


# ---------------------------------------------------------------------------
# noising robustness (per-k reconstruction NLL table)


def reconstruction_nll(bundle, sequences, noised=None, batch_size=128, head=0):
    """Mean per-sentence NLL of the originals given encodings of ``noised``."""
    if noised is None:
        noised = sequences
    total = 0.0
    for start in range(0, len(sequences), batch_size):
        orig = sequences[start:start + batch_size]
        noise = noised[start:start + batch_size]
        tok_n, len_n = pad_batch(noise)
        code = models.encode_sequence(bundle, tok_n, len_n)
        tok_o, len_o = pad_batch(orig)
        loss = models.decode_sequence_loss(bundle, DiffNode(code.value), tok_o, len_o,
                                           head=head)
        total += float(loss.value) * len(orig)
    return total / len(sequences)


def noising_reconstruction_table(bundle_arae, bundle_ae, corpus, k_values, rng,
                                 max_sentences=500):
    """Per-k mean NLL of originals decoded from corrupted-input codes."""
    if bundle_arae.arch.vocab_size != bundle_ae.arch.vocab_size:
        raise ContractError("bundles must share a vocabulary")
    table = {}
    for k in k_values:
        eligible = [s for s in corpus.sequences if len(s) - 1 >= 2 * k]
        if not eligible:
            continue
        chosen = eligible[:max_sentences]
        # swap content tokens only; EOS stays terminal
        noised = [k_swap(s[:-1], k, rng) + [EOS] for s in chosen]
        table[k] = {
            "arae": reconstruction_nll(bundle_arae, chosen, noised),
            "ae": reconstruction_nll(bundle_ae, chosen, noised),
            "n": len(chosen),
        }
    return table


# ---------------------------------------------------------------------------
# smoothness probe


def _random_edit_neighbor(seq, max_edit, vocab_size, rng):
    """Apply 1..max_edit random token edits to the content tokens."""
    content = list(seq[:-1])
    n_edits = 1 + rng.randbelow(max_edit)
    for _ in range(n_edits):
        op = rng.randbelow(3)
        if op == 0 and len(content) > 1:  # delete
            content.pop(rng.randbelow(len(content)))
        elif op == 1:  # insert
            pos = rng.randbelow(len(content) + 1)
            content.insert(pos, 4 + rng.randbelow(vocab_size - 4))
        else:  # substitute
            pos = rng.randbelow(len(content))
            content[pos] = 4 + rng.randbelow(vocab_size - 4)
    return content + [EOS]


def encode_corpus(bundle, sequences, batch_size=256):
    out = []
    for start in range(0, len(sequences), batch_size):
        tokens, lengths = pad_batch(sequences[start:start + batch_size])
        out.append(models.encode_sequence(bundle, tokens, lengths).value)
    return np.concatenate(out, axis=0)


def smoothness_probe(bundle, corpus, rng, n_sentences=250, n_neighbors=100,
                     max_edit=5, candidate_pool=200, neighbors=None):
    """Mean cosine similarity between probe codes and near-neighbor codes.

    Neighbors come from the corpus when within ``max_edit`` token edits;
    the remainder are synthesized by random edits. Pass ``neighbors`` (as
    returned in the second output) to reuse the same probe set across
    bundles.
    """
    if neighbors is None:
        neighbors = build_probe_neighbors(corpus, rng, n_sentences, n_neighbors,
                                          max_edit, candidate_pool,
                                          bundle.arch.vocab_size)
    sims = []
    for probe_seq, neigh_seqs in neighbors:
        probe_code = encode_corpus(bundle, [probe_seq])[0]
        neigh_codes = encode_corpus(bundle, neigh_seqs)
        sims.append(float((neigh_codes @ probe_code).mean()))  # codes are unit-norm
    return float(np.mean(sims)), neighbors


def build_probe_neighbors(corpus, rng, n_sentences, n_neighbors, max_edit,
                          candidate_pool, vocab_size):
    neighbors = []
    n_corpus = len(corpus)
    for _ in range(n_sentences):
        pi = rng.randbelow(n_corpus)
        probe = corpus.sequences[pi]
        found = []
        for _ in range(candidate_pool):
            ci = rng.randbelow(n_corpus)
            if ci == pi:
                continue
            cand = corpus.sequences[ci]
            if 0 < edit_distance(probe[:-1], cand[:-1]) <= max_edit:
                found.append(cand)
                if len(found) >= n_neighbors:
                    break
        while len(found) < n_neighbors:
            synth = _random_edit_neighbor(probe, max_edit, vocab_size, rng)
            if synth != probe and len(synth) > 1:
                found.append(synth)
        neighbors.append((probe, found))
    return neighbors


# ---------------------------------------------------------------------------
# moment diagnostics


def moment_diagnostics(encoder_codes, generator_codes, max_order=2):
    """Per-order gaps between the two code clouds (sup-norm)."""
    c = np.asarray(encoder_codes, dtype=np.float64)
    g = np.asarray(generator_codes, dtype=np.float64)
    if c.shape[1] != g.shape[1]:
        raise ContractError("code dimensions differ")
    gaps = {}
    if max_order >= 1:
        gaps[1] = float(np.abs(c.mean(axis=0) - g.mean(axis=0)).max())
    if max_order >= 2:
        gaps[2] = float(np.abs(np.cov(c, rowvar=False, bias=True) -
                               np.cov(g, rowvar=False, bias=True)).max())
    return gaps


# ---------------------------------------------------------------------------
# bag-of-words judge


class BowClassifier:
    """Logistic regression on token counts; the internal transfer judge."""

    def __init__(self, vocab_size, num_classes=2):
        self.vocab_size = vocab_size
        self.num_classes = num_classes
        self.W = np.zeros((num_classes, vocab_size))
        self.b = np.zeros(num_classes)

    def _features(self, sequences):
        X = np.zeros((len(sequences), self.vocab_size))
        for i, s in enumerate(sequences):
            for tok in s:
                if tok not in (PAD, EOS):
                    X[i, tok] += 1
        return X

    def fit(self, sequences, labels, lr=0.5, epochs=200):
        X = self._features(sequences)
        y = np.asarray(labels)
        onehot = np.eye(self.num_classes)[y]
        for _ in range(epochs):
            logits = X @ self.W.T + self.b
            probs = dm.softmax(logits)
            grad = (probs - onehot) / len(y)
            self.W -= lr * grad.T @ X
            self.b -= lr * grad.sum(axis=0)
        return self

    def predict(self, sequences):
        X = self._features(sequences)
        return np.argmax(X @ self.W.T + self.b, axis=1)

    def accuracy(self, sequences, labels):
        return float((self.predict(sequences) == np.asarray(labels)).mean())


# ---------------------------------------------------------------------------
# transfer evaluation


def transfer_eval(bundle, labeled_heldout, judge, real_lm, lm_config,
                  judge_gate=0.95, gate_corpus=None):
    """Transfer%, BLEU, PPL, and reverse PPL for attribute flipping.

    BLEU is reported on the conventional 0-100 scale. ``judge`` must pass
    its accuracy gate on ``gate_corpus`` (defaults to the held-out set)
    before being trusted.
    """
    gate = gate_corpus or labeled_heldout
    acc = judge.accuracy(gate.sequences, gate.labels)
    if acc < judge_gate:
        raise ContractError(
            f"transfer judge accuracy {acc:.3f} below the {judge_gate:.0%} gate")
    originals, transferred, targets = [], [], []
    for start in range(0, len(labeled_heldout), 128):
        seqs = labeled_heldout.sequences[start:start + 128]
        labels = labeled_heldout.labels[start:start + 128]
        by_head = {}
        for s, y in zip(seqs, labels):
            by_head.setdefault(1 - y, []).append(s)
        for head, group in sorted(by_head.items()):
            tokens, lengths = pad_batch(group)
            codes = models.encode_sequence(bundle, tokens, lengths).value
            outs = models.decode_sequence_greedy(bundle, codes, head=head)
            for s, o in zip(group, outs):
                originals.append(s[:-1])
                transferred.append(o)
                targets.append(head)
    preds = judge.predict(transferred)
    transfer_pct = float((preds == np.asarray(targets)).mean())
    bleu_score = 100.0 * corpus_bleu(transferred, originals)
    out_corpus = SequenceCorpus([list(t) + [EOS] for t in transferred],
                                vocab=labeled_heldout.vocab)
    ppl = perplexity(real_lm, out_corpus)
    rev = reverse_ppl(transferred, labeled_heldout, lm_config,
                      vocab_size=bundle.arch.vocab_size)
    return {"transfer": transfer_pct, "bleu": bleu_score, "ppl": ppl,
            "reverse_ppl": rev.ppl, "judge_accuracy": acc}


# ---------------------------------------------------------------------------
# semi-supervised probe


@dataclass
class ProbeConfig:
    hidden: int = 32
    lr: float = 1e-2
    epochs: int = 200
    seed: int = 5


def fit_code_probe(train_codes, train_labels, test_codes, test_labels, config):
    """Small MLP classifier on frozen codes; returns test accuracy."""
    from .training import Adam
    rng = SeededRng(config.seed)
    num_classes = len(set(train_labels))
    l1 = nn.AffineLayer(train_codes.shape[1], config.hidden, rng)
    l2 = nn.AffineLayer(config.hidden, num_classes, rng)
    params = l1.params() + l2.params()
    opt = Adam(params, config.lr)
    y = np.asarray(train_labels)
    X = DiffNode(train_codes.astype(np.float32))
    for _ in range(config.epochs):
        dm.zero_grads(params)
        logits = l2.forward(dm.relu(l1.forward(X)))
        loss, _ = dm.softmax_cross_entropy(logits, y)
        dm.backward(loss)
        opt.step()
    test_logits = l2.forward(dm.relu(l1.forward(DiffNode(test_codes.astype(np.float32))))).value
    return float((np.argmax(test_logits, axis=1) == np.asarray(test_labels)).mean())


def train_supervised_encoder(arch, labeled_corpus, epochs=10, lr=1.0,
                             batch_size=32, seed=9, grad_clip=1.0):
    """Encoder + classifier trained jointly on the labeled data alone."""
    from .training import SGD, clip_grad_norm
    rng = SeededRng(seed)
    bundle = models.ModelBundle(arch, rng)
    cls_rng = rng.spawn()
    head = nn.AffineLayer(arch.code_dim, 2, cls_rng)
    params = bundle.encoder_params() + head.params()
    opt = SGD(params, lr)
    data_rng = rng.spawn()
    for _ in range(epochs):
        for tokens, lengths, labels in batch_iterator(labeled_corpus, batch_size, data_rng):
            dm.zero_grads(params)
            codes = models.encode_sequence(bundle, tokens, lengths)
            loss, _ = dm.softmax_cross_entropy(head.forward(codes), labels)
            dm.backward(loss)
            clip_grad_norm(params, grad_clip)
            opt.step()
    return bundle


def semi_supervised_probe(bundles_by_name, labeled_subset, test_corpus,
                          probe_config=None):
    """Probe accuracy per encoder on frozen codes of the labeled subset."""
    probe_config = probe_config or ProbeConfig()
    out = {}
    for name, bundle in bundles_by_name.items():
        train_codes = encode_corpus(bundle, labeled_subset.sequences)
        test_codes = encode_corpus(bundle, test_corpus.sequences)
        out[name] = fit_code_probe(train_codes, labeled_subset.labels,
                                   test_codes, test_corpus.labels, probe_config)
    return out


# ---------------------------------------------------------------------------
# metric reports


@dataclass
class MetricReport:
    dataset_id: str
    checkpoint_id: str
    seed: int
    metrics: dict = field(default_factory=dict)

    def add(self, name, value):
        value = float(value)
        if not np.isfinite(value):
            raise ValueError(f"metric {name} is not finite")
        self.metrics[name] = value

    def lines(self):
        meta = f"dataset={self.dataset_id} checkpoint={self.checkpoint_id} seed={self.seed}"
        return [f"{name}={self.metrics[name]!r} {meta}" for name in self.metrics]

    def table(self):
        width = max((len(n) for n in self.metrics), default=6)
        rows = [f"{'metric':<{width}}  value",
                f"{'-' * width}  -----"]
        for name, value in self.metrics.items():
            rows.append(f"{name:<{width}}  {value:.6g}")
        return "\n".join(rows)
