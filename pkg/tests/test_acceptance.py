"""Acceptance battery.

Each test covers one release criterion and prints a single pass/fail line.
The heavyweight fixtures (full desk-scale training runs) are module-scoped
and shared across criteria, so the file trains each model exactly once.
"""

import json
import os
import time

import numpy as np
import pytest

from araelab import cli, data, diffmath as dm, evalsuite, latent, models, training
from araelab.data import EOS
from araelab.models import Architecture, ModelBundle
from araelab.rng import SeededRng
from araelab.training import (TrainConfig, ae_baseline_config, load_checkpoint,
                              run_training, save_checkpoint)

SEEDS = (7, 8, 9)          # training seeds shared by the multi-seed criteria
CORPUS_SEED = 100
N_TRAIN = 10000


def report(num, name, ok, detail):
    line = f"[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


def desk_train_config(**overrides):
    cfg = dict(cli.default_config())
    cfg.update(cli.PRESETS["text-desk"])
    kwargs = {k: cfg[k] for k in cfg if k in TrainConfig.__dataclass_fields__}
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def desk_architecture(corpus, transfer=False):
    p = cli.PRESETS["text-desk"]
    num_classes = corpus.num_attributes() if transfer else 0
    return Architecture(
        mode="text", code_dim=p["code_dim"], z_dim=p["z_dim"],
        gen_hidden=p["gen_hidden"], critic_hidden=p["critic_hidden"],
        vocab_size=len(corpus.vocab), emb_dim=p["emb_dim"],
        hidden_dim=p["hidden_dim"], max_train_len=corpus.max_len,
        num_heads=max(1, num_classes), cls_hidden=[32],
        num_classes=num_classes)


def greedy_accuracy(bundle, sequences, head=0):
    hits = 0
    for seq in sequences:
        code = models.encode_sequence(bundle, np.asarray([seq])).value
        out = models.decode_sequence_greedy(bundle, code, head=head)[0]
        hits += out == [t for t in seq if t != EOS]
    return hits / len(sequences)


def gen_moment_state(bundle, corpus):
    """Moment gaps and generator norm against 2000 encoder codes."""
    rng = SeededRng(999)
    enc = evalsuite.encode_corpus(bundle, corpus.sequences[:2000])
    z = rng.normal((2000, bundle.arch.z_dim), dtype=np.float64)
    gen = models.generate_code(bundle, z.astype(np.float32), mode="eval",
                               update_running=False).value
    gaps = evalsuite.moment_diagnostics(enc, gen)
    return gaps, float(np.linalg.norm(gen, axis=1).mean())


# ---------------------------------------------------------------------------
# shared training runs


@pytest.fixture(scope="module")
def corpus():
    return data.synth_corpus("sentiment", N_TRAIN, SeededRng(CORPUS_SEED))


@pytest.fixture(scope="module")
def heldout(corpus):
    """Held-out sentences re-encoded under the training vocabulary."""
    raw = data.synth_corpus("sentiment", 2000, SeededRng(CORPUS_SEED + 1))
    seqs, labels = [], []
    for seq, lbl in zip(raw.sequences, raw.labels):
        words = raw.vocab.decode(seq)
        seqs.append(corpus.vocab.encode(words) + [EOS])
        labels.append(lbl)
    return data.SequenceCorpus(sequences=seqs, labels=labels,
                               max_len=corpus.max_len, dropped=0,
                               vocab=corpus.vocab)


@pytest.fixture(scope="module")
def arae_runs(corpus, tmp_path_factory):
    runs = {}
    for seed in SEEDS:
        out = tmp_path_factory.mktemp(f"arae_s{seed}")
        config = desk_train_config(seed=seed)
        start = time.time()
        bundle, _ = run_training(corpus, config, desk_architecture(corpus),
                                 out_dir=str(out))
        runs[seed] = {"bundle": bundle, "out": out, "config": config,
                      "seconds": time.time() - start}
    return runs


@pytest.fixture(scope="module")
def ae_runs(corpus, arae_runs):
    runs = {}
    for seed in SEEDS:
        config = ae_baseline_config(arae_runs[seed]["config"])
        bundle, _ = run_training(corpus, config, desk_architecture(corpus))
        runs[seed] = bundle
    return runs


# ---------------------------------------------------------------------------
# 1. gradient integrity


def test_criterion_01_gradient_integrity():
    start = time.time()
    rng = SeededRng(41)
    worst = 0.0

    def draw(shape):
        return rng.uniform(-1, 1, shape, dtype=np.float64)

    def check(f, x0):
        nonlocal worst
        worst = max(worst, dm.grad_check(f, x0))

    unary = [dm.tanh, dm.bounded_tanh, dm.sigmoid, dm.relu,
             dm.sum_all, dm.mean_all, dm.neg,
             lambda a: dm.scale(a, 1.7),
             lambda a: dm.l2_normalize_rows(
                 dm.add(a, dm.as_node(np.full((2, 3), 2.0)))),
             lambda a: dm.slice_cols(a, 1, 3),
             dm.transpose]
    # 100 random points per operation, each a small random tensor
    for op in unary:
        for _ in range(100):
            check(lambda a: dm.sum_all(op(dm.as_node(a))), draw((2, 3)))
    targets = np.array([1, 0])
    for _ in range(100):
        b_mat = draw((3, 4))
        b_mul = draw((2, 3))
        b_cat = draw((2, 2))
        b_bits = (draw((2, 3)) > 0).astype(np.float64)
        check(lambda a: dm.sum_all(dm.matmul(dm.as_node(a),
                                             dm.as_node(b_mat))), draw((2, 3)))
        check(lambda a: dm.sum_all(dm.mul(dm.as_node(a),
                                          dm.as_node(b_mul))), draw((2, 3)))
        check(lambda a: dm.sum_all(dm.concat_cols(dm.as_node(a),
                                                  dm.as_node(b_cat))),
              draw((2, 3)))
        check(lambda a: dm.softmax_cross_entropy(dm.as_node(a), targets)[0],
              draw((2, 4)))
        check(lambda a: dm.sigmoid_cross_entropy(dm.as_node(a), b_bits),
              draw((2, 3)))

    # full losses, as functions of the latent code at 100 random points
    corpus = data.synth_corpus("sentiment", 4, SeededRng(42))
    arch = Architecture(mode="text", code_dim=4, z_dim=3, gen_hidden=[5],
                        critic_hidden=[5], vocab_size=len(corpus.vocab),
                        emb_dim=3, hidden_dim=4, max_train_len=10,
                        num_heads=2, cls_hidden=[5], num_classes=2)
    bundle = ModelBundle(arch, SeededRng(43), dtype=np.float64)
    img_arch = Architecture(mode="image", code_dim=4, z_dim=3, gen_hidden=[5],
                            critic_hidden=[5], n_pixels=9, enc_hidden=[6],
                            dec_hidden=[6])
    img_bundle = ModelBundle(img_arch, SeededRng(44), dtype=np.float64)
    tokens = np.asarray([corpus.sequences[0]])
    pixels = (draw((2, 9)) > 0).astype(np.float64)
    labels = np.array([1, 0])
    fake = draw((2, 4))
    losses = [
        (lambda c: models.decode_sequence_loss(bundle, c, tokens[:1]), (1, 4)),
        (lambda c: models.decode_image_loss(img_bundle, c, pixels), (2, 4)),
        (lambda c: dm.sub(dm.mean_all(models.critic_score(bundle, c)),
                          dm.mean_all(models.critic_score(
                              bundle, dm.as_node(fake)))), (2, 4)),
        (lambda c: dm.neg(dm.mean_all(models.critic_score(bundle, c))), (2, 4)),
        (lambda c: dm.softmax_cross_entropy(
            models.classifier_logits(bundle, c), labels)[0], (2, 4)),
    ]
    for loss, shape in losses:
        for _ in range(20):
            check(loss, draw(shape))
    elapsed = time.time() - start
    report(1, "gradient-integrity", worst < 1e-4 and elapsed < 120,
           f"max rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. hard invariants on every batch of a short run


def test_criterion_02_training_invariants():
    corpus = data.synth_corpus("sentiment", 400, SeededRng(51))
    arch = Architecture(mode="text", code_dim=8, z_dim=4, gen_hidden=[8],
                        critic_hidden=[8], vocab_size=len(corpus.vocab),
                        emb_dim=6, hidden_dim=8, max_train_len=corpus.max_len)
    config = desk_train_config(seed=51, epochs=2, batch_size=32)
    probe_tokens, probe_lengths = data.pad_batch(corpus.sequences[:16])
    probe_z = SeededRng(52).normal((16, 4), dtype=np.float64).astype(np.float32)
    groups = {
        "encoder": lambda b: b.encoder_params(),
        "decoder": lambda b: b.decoder_params(),
        "generator": lambda b: b.generator_params(),
        "critic": lambda b: b.critic_params(),
    }
    # which parameter groups each phase may modify
    allowed = {"phase1": {"encoder", "decoder"},
               "phase2": {"critic"},
               "phase3": {"encoder", "generator"}}
    state = {"snap": None, "violations": [], "checks": 0}

    def snapshot(bundle):
        return {name: [p.value.copy() for p in get(bundle)]
                for name, get in groups.items()}

    def on_phase(bundle, epoch, step, phase):
        if state["snap"] is not None:
            for name, get in groups.items():
                if name in allowed[phase]:
                    continue
                same = all(np.array_equal(old, p.value) for old, p in
                           zip(state["snap"][name], get(bundle)))
                if not same:
                    state["violations"].append(f"{phase} touched {name}")
        if phase == "phase2":
            for p in bundle.critic_params():
                if np.abs(p.value).max() > config.clip_eps + 1e-12:
                    state["violations"].append("critic weight outside clip box")
        code = models.encode_sequence(bundle, probe_tokens, probe_lengths).value
        if not np.allclose(np.linalg.norm(code, axis=1), 1.0, atol=1e-5):
            state["violations"].append(f"{phase}: encoder code not unit norm")
        gen = models.generate_code(bundle, probe_z, mode="eval",
                                   update_running=False).value
        if not (np.all(gen > -1.0) and np.all(gen < 1.0)):
            state["violations"].append(f"{phase}: generator code outside cube")
        state["snap"] = snapshot(bundle)
        state["checks"] += 1

    run_training(corpus, config, arch, callback=on_phase)
    ok = not state["violations"] and state["checks"] > 0
    report(2, "training-invariants", ok,
           f"{state['checks']} phase checks, "
           f"violations={state['violations'][:3]}")


# ---------------------------------------------------------------------------
# 3. reconstruction quality and speed


def test_criterion_03_reconstruction(corpus, arae_runs):
    run = arae_runs[SEEDS[0]]
    epoch10 = min(10, run["config"].epochs)
    bundle, _ = load_checkpoint(str(run["out"] / f"epoch{epoch10:03d}.arae"))
    acc = greedy_accuracy(bundle, corpus.sequences)
    budget = 600.0 * run["config"].epochs / epoch10
    ok = acc >= 0.95 and run["seconds"] < budget
    report(3, "reconstruction", ok,
           f"exact={acc:.3f} (need 0.95) in {run['seconds']:.0f}s "
           f"for {run['config'].epochs} epochs")


# ---------------------------------------------------------------------------
# 4. code-distribution matching


def test_criterion_04_distribution_matching(corpus, arae_runs):
    run = arae_runs[SEEDS[0]]
    final, _ = load_checkpoint(
        str(run["out"] / f"epoch{run['config'].epochs:03d}.arae"))
    first, _ = load_checkpoint(str(run["out"] / "epoch001.arae"))
    gaps_final, norm = gen_moment_state(final, corpus)
    gaps_first, _ = gen_moment_state(first, corpus)
    r1 = gaps_final[1] / gaps_first[1]
    r2 = gaps_final[2] / gaps_first[2]
    ok = 0.9 <= norm <= 1.1 and r1 < 0.25 and r2 < 0.25
    report(4, "distribution-matching", ok,
           f"gen norm {norm:.3f} (band 0.9-1.1), gap shrinkage "
           f"order1 {r1:.2f}, order2 {r2:.2f} (need < 0.25)")


# ---------------------------------------------------------------------------
# 5. noising robustness crossover


def test_criterion_05_noising_crossover(corpus, arae_runs, ae_runs):
    k_values = (0, 1, 2, 3, 4)
    sums = {k: {"arae": 0.0, "ae": 0.0} for k in k_values}
    for seed in SEEDS:
        table = evalsuite.noising_reconstruction_table(
            arae_runs[seed]["bundle"], ae_runs[seed], corpus, k_values,
            SeededRng(seed), max_sentences=500)
        for k in k_values:
            sums[k]["arae"] += table[k]["arae"] / len(SEEDS)
            sums[k]["ae"] += table[k]["ae"] / len(SEEDS)
    crossover = [k for k in (2, 3, 4) if sums[k]["arae"] < sums[k]["ae"]]
    rows = "; ".join(f"k={k}: {v['arae']:.2f} vs {v['ae']:.2f}"
                     for k, v in sums.items())
    report(5, "noising-crossover", bool(crossover),
           f"crossover at k={crossover}, mean NLL ({rows})")


# ---------------------------------------------------------------------------
# 6. latent smoothness


def test_criterion_06_smoothness(corpus, arae_runs, ae_runs):
    neighbors = evalsuite.build_probe_neighbors(
        corpus, SeededRng(61), n_sentences=250, n_neighbors=100, max_edit=5,
        candidate_pool=200, vocab_size=len(corpus.vocab))
    arae_means, ae_means = [], []
    for seed in SEEDS:
        m, _ = evalsuite.smoothness_probe(arae_runs[seed]["bundle"], corpus,
                                          SeededRng(seed), neighbors=neighbors)
        arae_means.append(m)
        m, _ = evalsuite.smoothness_probe(ae_runs[seed], corpus,
                                          SeededRng(seed), neighbors=neighbors)
        ae_means.append(m)
    arae_mean, ae_mean = np.mean(arae_means), np.mean(ae_means)
    report(6, "smoothness", arae_mean > ae_mean,
           f"neighbor cosine {arae_mean:.4f} vs baseline {ae_mean:.4f} "
           f"over {len(SEEDS)} seeds")


# ---------------------------------------------------------------------------
# 7. attribute transfer


def test_criterion_07_transfer(corpus, heldout, tmp_path_factory):
    start = time.time()
    config = desk_train_config(seed=SEEDS[0], transfer=True,
                               lambda2=cli.PRESETS["text-desk"].get(
                                   "lambda2", 1.0))
    arch = desk_architecture(corpus, transfer=True)
    bundle, _ = run_training(corpus, config, arch)
    judge = evalsuite.BowClassifier(len(corpus.vocab))
    judge.fit(corpus.sequences, corpus.labels)
    lm = evalsuite.train_lm(corpus, evalsuite.LmConfig(epochs=4))
    metrics = evalsuite.transfer_eval(bundle, heldout, judge, lm,
                                      evalsuite.LmConfig(epochs=4),
                                      gate_corpus=heldout)
    elapsed = time.time() - start
    ok = (metrics["transfer"] >= 0.80 and metrics["bleu"] >= 40.0
          and elapsed < 900)
    report(7, "attribute-transfer", ok,
           f"transfer={metrics['transfer']:.3f} (need 0.80), "
           f"bleu={metrics['bleu']:.1f} (need 40), {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 8. reverse perplexity ordering and sample diversity


def test_criterion_08_reverse_ppl(corpus, heldout, arae_runs):
    bundle = arae_runs[SEEDS[0]]["bundle"]
    rng = SeededRng(81)
    z = rng.normal((5000, bundle.arch.z_dim), dtype=np.float64)
    codes = models.generate_code(bundle, z.astype(np.float32), mode="eval",
                                 update_running=False).value
    samples = []
    for start in range(0, 5000, 250):
        samples.extend(models.decode_sequence_greedy(
            bundle, codes[start:start + 250]))
    lm_config = evalsuite.LmConfig(epochs=4)
    result = evalsuite.reverse_ppl(samples, heldout, lm_config,
                                   len(corpus.vocab))
    real_lm = evalsuite.train_lm(corpus, lm_config)
    real_ppl = evalsuite.perplexity(real_lm, heldout)
    ok = (real_ppl < result.ppl and result.distinct_ratio >= 0.10
          and not result.mode_collapse_suspect)
    report(8, "reverse-perplexity", ok,
           f"real-trained {real_ppl:.2f} < sample-trained {result.ppl:.2f}, "
           f"distinct {result.distinct_ratio:.2f} (need 0.10)")


# ---------------------------------------------------------------------------
# 9. semi-supervised ordering


def test_criterion_09_semi_supervised(corpus, heldout, arae_runs, ae_runs):
    n_labeled = N_TRAIN // 20          # 5% labels
    labeled = corpus.subset(range(n_labeled))
    accs = {"arae": [], "ae": [], "supervised": []}
    for seed in SEEDS:
        supervised = evalsuite.train_supervised_encoder(
            desk_architecture(corpus), labeled, seed=seed)
        out = evalsuite.semi_supervised_probe(
            {"arae": arae_runs[seed]["bundle"], "ae": ae_runs[seed],
             "supervised": supervised}, labeled, heldout,
            # train the probe to convergence: an under-trained probe
            # understates code separability
            probe_config=evalsuite.ProbeConfig(epochs=1000))
        for name, acc in out.items():
            accs[name].append(acc)
    means = {name: float(np.mean(v)) for name, v in accs.items()}

    def gap_ok(upper, lower):
        # mean gap must be non-negative within the seed-to-seed spread
        gaps = np.asarray(accs[upper]) - np.asarray(accs[lower])
        spread = gaps.std(ddof=1) if len(gaps) > 1 else 0.0
        return gaps.mean() + spread >= 0.0

    ok = gap_ok("arae", "ae") and gap_ok("ae", "supervised")
    report(9, "semi-supervised-ordering", ok,
           f"arae {means['arae']:.3f} >= ae {means['ae']:.3f} >= "
           f"supervised {means['supervised']:.3f}, gaps within seed variance")


# ---------------------------------------------------------------------------
# 10. latent tooling: interpolation endpoints and offset vectors


def test_criterion_10_latent_tooling(corpus, arae_runs):
    bundle = arae_runs[SEEDS[0]]["bundle"]
    rng = SeededRng(101)
    z = rng.normal((2, bundle.arch.z_dim), dtype=np.float64)
    path = np.asarray(latent.interpolate(z[0], z[1], steps=5),
                      dtype=np.float32)
    path_codes = models.generate_code(bundle, path, mode="eval",
                                      update_running=False).value
    direct = models.generate_code(bundle, z.astype(np.float32), mode="eval",
                                  update_running=False).value
    path_sents = models.decode_sequence_greedy(bundle, path_codes)
    direct_sents = models.decode_sequence_greedy(bundle, direct)
    endpoints_ok = (path_sents[0] == direct_sents[0]
                    and path_sents[-1] == direct_sents[1])

    codes = evalsuite.encode_corpus(bundle, corpus.sequences[:4000])
    labels = np.asarray(corpus.labels[:4000])
    offset = latent.build_offset(codes[labels == 0], codes[labels == 1])
    vocab = corpus.vocab

    def is_flipped(tokens):
        return data.sentence_label(vocab.decode(tokens)) == 1

    sample_rng = SeededRng(102)
    matches = 0
    for _ in range(100):
        probe_z = rng.normal((1, bundle.arch.z_dim), dtype=np.float64)
        base_code = models.generate_code(bundle, probe_z.astype(np.float32),
                                         mode="eval", update_running=False).value
        base = models.decode_sequence_greedy(bundle, base_code)[0]
        match, _, _ = latent.apply_offset_and_score(
            bundle, probe_z, offset, is_flipped, base, sample_rng,
            n_samples=100)
        matches += match
    ok = endpoints_ok and matches >= 50
    report(10, "latent-tooling", ok,
           f"endpoints identical={endpoints_ok}, offset flip match "
           f"{matches}/100 (need 50)")


# ---------------------------------------------------------------------------
# 11. determinism and persistence


def test_criterion_11_determinism(tmp_path):
    corpus = data.synth_corpus("sentiment", 600, SeededRng(111))
    arch = desk_architecture(corpus)
    config = desk_train_config(seed=111, epochs=2)
    logs = []
    for name in ("a", "b"):
        out = tmp_path / name
        out.mkdir()
        run_training(corpus, config, arch, out_dir=str(out))
        logs.append((out / "train_log.jsonl").read_bytes())
    logs_identical = logs[0] == logs[1]

    bundle, _ = load_checkpoint(str(tmp_path / "a" / "epoch002.arae"))
    before = evalsuite.reconstruction_nll(bundle, corpus.sequences[:100])
    p1, p2 = tmp_path / "c1.arae", tmp_path / "c2.arae"
    save_checkpoint(bundle, str(p1), vocab=corpus.vocab)
    reloaded, _ = load_checkpoint(str(p1))
    save_checkpoint(reloaded, str(p2), vocab=corpus.vocab)
    roundtrip_exact = p1.read_bytes() == p2.read_bytes()
    after = evalsuite.reconstruction_nll(reloaded, corpus.sequences[:100])
    metric_drift = abs(before - after)
    ok = logs_identical and roundtrip_exact and metric_drift < 1e-6
    report(11, "determinism-persistence", ok,
           f"logs identical={logs_identical}, checkpoint bit-exact="
           f"{roundtrip_exact}, metric drift {metric_drift:.2e}")


# ---------------------------------------------------------------------------
# 12. oracle equivalences


def test_criterion_12_oracle_equivalences():
    corpus = data.synth_corpus("sentiment", 6, SeededRng(121))
    arch = Architecture(mode="text", code_dim=8, z_dim=4, gen_hidden=[6],
                        critic_hidden=[6], vocab_size=len(corpus.vocab),
                        emb_dim=5, hidden_dim=8, max_train_len=corpus.max_len)
    bundle = ModelBundle(arch, SeededRng(122))
    tokens, lengths = data.pad_batch(corpus.sequences)
    code = models.encode_sequence(bundle, tokens, lengths)
    batched = float(models.decode_sequence_loss(bundle, code, tokens,
                                                lengths).value)
    per = [float(models.decode_sequence_loss(
        bundle, models.encode_sequence(bundle, np.asarray([s])),
        np.asarray([s])).value) for s in corpus.sequences]
    loss_gap = abs(batched - np.mean(per))

    ce, _ = dm.softmax_cross_entropy(dm.as_node(np.zeros((1, 2))),
                                     np.array([0]))
    ce_gap = abs(float(ce.value) - np.log(2.0))

    bleu_gap = abs(evalsuite.corpus_bleu([["the", "cat"]],
                                         [["the", "cat", "sat"]])
                   - np.exp(1 - 3 / 2))
    edit_ok = (evalsuite.edit_distance("kitten", "sitting") == 3
               and evalsuite.edit_distance([1, 2, 3], [1, 3]) == 1)

    lm = evalsuite.LanguageModel(len(corpus.vocab), evalsuite.LmConfig())
    for p in lm.params():
        p.value = np.zeros_like(p.value)
    ppl_gap = abs(evalsuite.perplexity(lm, corpus) - len(corpus.vocab))

    ok = (loss_gap < 1e-5 and ce_gap < 1e-9 and bleu_gap < 1e-9
          and edit_ok and ppl_gap < 1e-3)
    report(12, "oracle-equivalences", ok,
           f"batched-loss gap {loss_gap:.1e}, softmax-ce gap {ce_gap:.1e}, "
           f"bleu gap {bleu_gap:.1e}, edit ok={edit_ok}, "
           f"uniform-ppl gap {ppl_gap:.1e}")
