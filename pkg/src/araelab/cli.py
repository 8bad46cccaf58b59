"""Command-line surface: train, sample, interpolate, arithmetic, transfer,
eval, and synthetic-data generation.

Configuration is a flat UTF-8 ``key = value`` file (no nesting); unknown
keys are rejected. Presets supply complete defaults; flags override both.
Exit codes: 0 success, 2 usage/configuration error, 3 numeric failure.
"""

import argparse
import os
import sys

import numpy as np

from . import data, evalsuite, latent, models, training
from .diffmath import ContractError
from .models import Architecture, ConfigurationError
from .rng import SeededRng
from .training import TrainConfig, TrainingDiverged, load_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration schema: flat key = value, every key typed and documented

def _int_list(text):
    text = text.strip()
    if not text or text in ("[]", "none"):
        return []
    return [int(v) for v in text.replace("[", "").replace("]", "").split(",")]


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    low = str(text).strip().lower()
    return None if low in ("", "none") else float(text)


# key -> (parser, default). Defaults mirror TrainConfig plus run plumbing.
CONFIG_SCHEMA = {
    # run plumbing
    "mode": (str, "text"),              # text | image
    "data": (str, "synth"),             # path, directory, or synth[:N]
    "out": (str, "runs/out"),
    "transfer": (_bool, False),
    "max_len": (int, 15),
    # architecture
    "code_dim": (int, 32),
    "z_dim": (int, 32),
    "emb_dim": (int, 32),
    "hidden_dim": (int, 32),
    "gen_hidden": (_int_list, [48, 48]),
    "critic_hidden": (_int_list, [64, 48]),
    "cls_hidden": (_int_list, [32]),
    "enc_hidden": (_int_list, []),
    "dec_hidden": (_int_list, []),
    "n_pixels": (int, 0),
    # optimization
    "lambda1": (float, 1.0),
    "lambda2": (float, 1.0),
    "clip_eps": (float, 0.01),
    "critic_iters": (int, 5),
    "gan_loops_init": (int, 1),
    "gan_schedule": (_int_list, [2, 4, 6]),
    "lr_ae": (float, 1.0),
    "lr_gen": (float, 5e-5),
    "lr_critic": (float, 1e-5),
    "lr_cls": (float, 0.1),
    "ae_optimizer": (str, "sgd"),
    "cls_optimizer": (str, "sgd"),
    "lr_enc_adv": (_opt_float, None),
    "gan_lr_decay": (float, 1.0),
    "gan_lr_decay_start": (int, 2),
    "gan_adam_beta1": (float, 0.9),
    "noise_sigma": (float, 0.2),
    "noise_decay": (float, 0.995),
    "noise_decay_every": (int, 100),
    "batch_size": (int, 64),
    "epochs": (int, 5),
    "seed": (int, 1),
    "grad_clip": (float, 1.0),
    "log_every": (int, 50),
}

_TRAIN_KEYS = [k for k in CONFIG_SCHEMA
               if k in TrainConfig.__dataclass_fields__]

PRESETS = {
    # Small text run sized for a single CPU core; tuned so reconstruction
    # and code-distribution matching both land within a few minutes.
    "text-desk": {
        "mode": "text", "code_dim": 24, "z_dim": 24, "emb_dim": 32,
        "hidden_dim": 24, "gen_hidden": [48, 48], "critic_hidden": [64, 48],
        "ae_optimizer": "adam", "lr_ae": 5e-3, "lr_enc_adv": 0.01,
        "lr_gen": 2e-3, "lr_critic": 5e-4, "clip_eps": 0.1,
        "critic_iters": 5, "gan_loops_init": 1, "gan_schedule": [2, 4, 6],
        "gan_lr_decay": 0.75, "gan_lr_decay_start": 5,
        "noise_sigma": 0.05, "lambda1": 0.5, "epochs": 14,
    },
    # Small binarized-image run.
    "image-desk": {
        "mode": "image", "code_dim": 16, "z_dim": 8, "emb_dim": 0,
        "hidden_dim": 0, "n_pixels": 64, "enc_hidden": [64],
        "dec_hidden": [64], "gen_hidden": [32, 32], "critic_hidden": [32, 32],
        "ae_optimizer": "adam", "lr_ae": 5e-4, "lr_gen": 5e-4,
        "lr_critic": 2e-4, "clip_eps": 0.05, "critic_iters": 10,
        "noise_sigma": 0.4, "lambda1": 0.2, "epochs": 10,
    },
    # Full-scale text settings for documentation; far beyond desk budget.
    "text-paper": {
        "mode": "text", "code_dim": 300, "z_dim": 100, "emb_dim": 300,
        "hidden_dim": 300, "gen_hidden": [300, 300],
        "critic_hidden": [300, 300], "ae_optimizer": "sgd", "lr_ae": 1.0,
        "lr_gen": 5e-5, "lr_critic": 1e-5, "clip_eps": 0.01,
        "critic_iters": 5, "gan_schedule": [2, 4, 6],
        "noise_sigma": 0.2, "noise_decay": 0.995, "noise_decay_every": 100,
        "lambda1": 1.0, "grad_clip": 1.0,
    },
    # Full-scale binarized-MNIST settings for documentation.
    "image-paper": {
        "mode": "image", "code_dim": 100, "z_dim": 32, "emb_dim": 0,
        "hidden_dim": 0, "n_pixels": 784, "enc_hidden": [800, 400],
        "dec_hidden": [400, 800], "gen_hidden": [300, 300],
        "critic_hidden": [300, 300], "ae_optimizer": "adam", "lr_ae": 5e-4,
        "lr_gen": 5e-5, "lr_critic": 1e-5, "clip_eps": 0.05,
        "critic_iters": 10, "noise_sigma": 0.4, "lambda1": 0.2,
    },
}


def default_config():
    return {k: default for k, (_, default) in CONFIG_SCHEMA.items()}


def parse_config_file(path):
    """Flat ``key = value`` lines; blank lines and ``#`` comments allowed."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            parser = CONFIG_SCHEMA[key][0]
            try:
                out[key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return out


def resolve_config(args):
    """defaults <- preset <- config file <- flags, with unknown-key checks."""
    cfg = default_config()
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r} "
                              f"(choose from {', '.join(sorted(PRESETS))})")
        cfg.update(PRESETS[args.preset])
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    for flag in ("mode", "data", "out", "seed", "epochs", "lambda1", "lambda2"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[flag] = value
    if cfg["mode"] not in ("text", "image"):
        raise ConfigError(f"mode must be text or image, got {cfg['mode']!r}")
    return cfg


def format_config(cfg):
    lines = []
    for key in CONFIG_SCHEMA:
        value = cfg[key]
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif value is None:
            value = "none"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_effective_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))


# ---------------------------------------------------------------------------
# dataset and architecture assembly


def load_dataset(cfg):
    """Returns (corpus, vocab or None) for the configured mode and path."""
    spec = cfg["data"]
    if cfg["mode"] == "image":
        if not os.path.exists(spec):
            raise ConfigError(f"image data file not found: {spec}")
        return data.load_binary_images(spec), None
    if spec.startswith("synth"):
        size = 10000
        if ":" in spec:
            try:
                size = int(spec.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad synthetic corpus size in {spec!r}")
        corpus = data.synth_corpus("sentiment", size, SeededRng(cfg["seed"]))
        return corpus, corpus.vocab
    if os.path.isdir(spec):
        files = sorted(f for f in os.listdir(spec) if f.endswith(".txt"))
        if not files:
            raise ConfigError(f"no .txt attribute files in directory {spec}")
        lines = []
        for f in files:
            with open(os.path.join(spec, f), encoding="utf-8") as fh:
                lines.extend(fh)
        vocab = data.build_vocab(lines)
        paths = {i: os.path.join(spec, f) for i, f in enumerate(files)}
        corpus = data.load_attribute_corpus(paths, vocab, cfg["max_len"])
        return corpus, vocab
    if not os.path.exists(spec):
        raise ConfigError(f"data path not found: {spec}")
    with open(spec, encoding="utf-8") as fh:
        vocab = data.build_vocab(fh)
    return data.load_text_corpus(spec, vocab, cfg["max_len"]), vocab


def build_architecture(cfg, corpus, vocab):
    if cfg["mode"] == "image":
        return Architecture(
            mode="image", code_dim=cfg["code_dim"], z_dim=cfg["z_dim"],
            gen_hidden=cfg["gen_hidden"], critic_hidden=cfg["critic_hidden"],
            n_pixels=corpus.n_pixels, enc_hidden=cfg["enc_hidden"],
            dec_hidden=cfg["dec_hidden"])
    num_classes = corpus.num_attributes() if cfg["transfer"] else 0
    return Architecture(
        mode="text", code_dim=cfg["code_dim"], z_dim=cfg["z_dim"],
        gen_hidden=cfg["gen_hidden"], critic_hidden=cfg["critic_hidden"],
        vocab_size=len(vocab), emb_dim=cfg["emb_dim"],
        hidden_dim=cfg["hidden_dim"], max_train_len=corpus.max_len,
        num_heads=max(1, num_classes), cls_hidden=cfg["cls_hidden"],
        num_classes=num_classes)


def train_config_from(cfg):
    kwargs = {k: cfg[k] for k in _TRAIN_KEYS}
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    cfg = resolve_config(args)
    corpus, vocab = load_dataset(cfg)
    arch = build_architecture(cfg, corpus, vocab)
    config = train_config_from(cfg)
    config.validate()
    write_effective_config(cfg, cfg["out"])
    if vocab is not None:
        vocab.save(os.path.join(cfg["out"], "vocab.txt"))
    training.run_training(corpus, config, arch, out_dir=cfg["out"])
    print(f"trained {config.epochs} epochs; checkpoints in {cfg['out']}")
    return EXIT_OK


def _load_for_decode(path):
    bundle, vocab = load_checkpoint(path)
    return bundle, vocab


def _decode_lines(bundle, vocab, codes, head=0):
    lines = []
    for i in range(len(codes)):
        toks = models.decode_sequence_greedy(bundle, codes[i:i + 1], head=head)[0]
        lines.append(" ".join(vocab.decode(toks)) if vocab is not None
                     else " ".join(str(t) for t in toks))
    return lines


def _emit(lines, out_path):
    text = "\n".join(lines) + ("\n" if lines else "")
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_sample(args):
    bundle, vocab = _load_for_decode(args.checkpoint)
    rng = SeededRng(args.seed)
    n = args.n
    if n < 0:
        raise ConfigError("--n must be >= 0")
    if args.source == "gan":
        z = rng.normal((max(n, 1), bundle.arch.z_dim), dtype=np.float64)
        codes = models.generate_code(
            bundle, z.astype(np.float32), mode="eval",
            update_running=False).value[:n]
    else:  # ae-gaussian
        if not args.data:
            raise ConfigError("source=ae-gaussian needs --data to fit the "
                              "code distribution")
        cfg = default_config()
        cfg["data"], cfg["seed"], cfg["mode"] = args.data, args.seed, bundle.arch.mode
        corpus, _ = load_dataset(cfg)
        if bundle.arch.mode == "text":
            enc = evalsuite.encode_corpus(bundle, corpus.sequences)
        else:
            enc = models.encode_image(bundle, corpus.images).value
        gauss = latent.fit_code_gaussian(enc)
        codes = latent.sample_code(gauss, rng, n=max(n, 2))[:n]
    if bundle.arch.mode == "image":
        lines = []
        for i in range(n):
            img = models.decode_image(bundle, codes[i:i + 1])[0]
            lines.append(",".join(str(int(v >= 0.5)) for v in img))
    else:
        lines = _decode_lines(bundle, vocab, codes)
    _emit(lines, args.out)
    return EXIT_OK


def cmd_interpolate(args):
    bundle, vocab = _load_for_decode(args.checkpoint)
    rng = SeededRng(args.seed)
    z = rng.normal((2, bundle.arch.z_dim), dtype=np.float64)
    path = latent.interpolate(z[0], z[1], args.steps)
    codes = models.generate_code(
        bundle, np.asarray(path, dtype=np.float32), mode="eval",
        update_running=False).value
    lines = _decode_lines(bundle, vocab, codes)
    _emit([f"{i}\t{line}" for i, line in enumerate(lines)], args.out)
    return EXIT_OK


def cmd_arithmetic(args):
    bundle, vocab = _load_for_decode(args.checkpoint)
    if bundle.arch.mode != "text":
        raise ConfigError("arithmetic needs a text checkpoint")
    try:
        from_attr, to_attr = (int(v) for v in args.attribute.split(":"))
    except ValueError:
        raise ConfigError(f"attribute spec must be FROM:TO ints, got "
                          f"{args.attribute!r}")
    cfg = default_config()
    cfg["data"], cfg["seed"] = args.data, args.seed
    corpus, _ = load_dataset(cfg)
    if corpus.labels is None:
        raise ConfigError("arithmetic needs a labeled corpus")
    codes = evalsuite.encode_corpus(bundle, corpus.sequences)
    by = {lbl: codes[[i for i, l in enumerate(corpus.labels) if l == lbl]]
          for lbl in (from_attr, to_attr)}
    offset = latent.build_offset(by[from_attr], by[to_attr],
                                 from_value=str(from_attr),
                                 to_value=str(to_attr))
    rng = SeededRng(args.seed)
    matches, precisions = 0, []
    for _ in range(args.n):
        z = rng.normal((1, bundle.arch.z_dim), dtype=np.float64)
        base_code = models.generate_code(
            bundle, z.astype(np.float32), mode="eval",
            update_running=False).value
        base = models.decode_sequence_greedy(bundle, base_code)[0]

        def hit(tokens):
            words = vocab.decode(tokens) if vocab else []
            return data.sentence_label(words) == to_attr

        match, precision, _ = latent.apply_offset_and_score(
            bundle, z, offset, hit, base, rng, n_samples=args.samples)
        matches += match
        if match:
            precisions.append(precision)
    report = evalsuite.MetricReport("arithmetic", args.checkpoint, args.seed)
    report.add("match", matches / max(args.n, 1))
    report.add("precision", float(np.mean(precisions)) if precisions else 0.0)
    _emit(report.lines(), args.out)
    return EXIT_OK


def cmd_transfer(args):
    bundle, vocab = _load_for_decode(args.checkpoint)
    if bundle.arch.mode != "text":
        raise ConfigError("transfer needs a text checkpoint")
    if bundle.arch.num_heads < 2:
        raise ConfigError("checkpoint has no attribute decoder heads; "
                          "train with transfer = true")
    if not (0 <= args.target < bundle.arch.num_heads):
        raise ConfigError(f"target attribute {args.target} out of range")
    if not os.path.exists(args.input):
        raise ConfigError(f"input file not found: {args.input}")
    corpus = data.load_text_corpus(args.input, vocab)
    codes = evalsuite.encode_corpus(bundle, corpus.sequences)
    lines = _decode_lines(bundle, vocab, codes, head=args.target)
    _emit(lines, args.out)
    return EXIT_OK


def _eval_noising(bundle, baseline, corpus, seed, out):
    table = evalsuite.noising_reconstruction_table(
        bundle, baseline, corpus, k_values=(0, 1, 2, 3, 4),
        rng=SeededRng(seed))
    lines = ["k\tnll_arae\tnll_ae\tn"]
    for k in sorted(table):
        row = table[k]
        lines.append(f"{k}\t{row['arae']:.4f}\t{row['ae']:.4f}\t{row['n']}")
    out.extend(lines)


def cmd_eval(args):
    bundle, vocab = _load_for_decode(args.checkpoint)
    cfg = default_config()
    cfg["data"], cfg["seed"], cfg["mode"] = args.data, args.seed, bundle.arch.mode
    corpus, _ = load_dataset(cfg)
    suites = ("noising", "smoothness", "moments", "reverse-ppl", "transfer") \
        if args.suite == "all" else (args.suite,)
    needs_baseline = {"noising", "smoothness"}
    baseline = None
    if needs_baseline & set(suites):
        if not args.baseline:
            raise ConfigError(f"suite {args.suite!r} needs --baseline "
                              "(autoencoder-only checkpoint)")
        baseline, _ = load_checkpoint(args.baseline)
    out_lines = []
    rng = SeededRng(args.seed)
    for suite in suites:
        report = evalsuite.MetricReport(cfg["data"], args.checkpoint, args.seed)
        if suite == "noising":
            _eval_noising(bundle, baseline, corpus, args.seed, out_lines)
            continue
        if suite == "smoothness":
            mean_adv, neighbors = evalsuite.smoothness_probe(bundle, corpus, rng)
            mean_base, _ = evalsuite.smoothness_probe(
                baseline, corpus, rng, neighbors=neighbors)
            report.add("smoothness", mean_adv)
            report.add("smoothness_baseline", mean_base)
        elif suite == "moments":
            enc = evalsuite.encode_corpus(bundle, corpus.sequences[:2000]) \
                if bundle.arch.mode == "text" else \
                models.encode_image(bundle, corpus.images[:2000]).value
            z = rng.normal((2000, bundle.arch.z_dim), dtype=np.float64)
            gen = models.generate_code(bundle, z.astype(np.float32),
                                       mode="eval", update_running=False).value
            gaps = evalsuite.moment_diagnostics(enc, gen)
            report.add("moment_gap_1", gaps[1])
            report.add("moment_gap_2", gaps[2])
            report.add("gen_code_norm", float(np.linalg.norm(gen, axis=1).mean()))
        elif suite == "reverse-ppl":
            if bundle.arch.mode != "text":
                raise ConfigError("reverse-ppl needs a text checkpoint")
            z = rng.normal((args.n, bundle.arch.z_dim), dtype=np.float64)
            codes = models.generate_code(bundle, z.astype(np.float32),
                                         mode="eval", update_running=False).value
            samples = [models.decode_sequence_greedy(bundle, codes[i:i + 1])[0]
                       for i in range(len(codes))]
            result = evalsuite.reverse_ppl(samples, corpus,
                                           evalsuite.LmConfig(seed=args.seed),
                                           bundle.arch.vocab_size)
            report.add("reverse_ppl", result.ppl)
            report.add("distinct_ratio", result.distinct_ratio)
        elif suite == "transfer":
            if corpus.labels is None:
                raise ConfigError("transfer suite needs a labeled corpus")
            judge = evalsuite.BowClassifier(bundle.arch.vocab_size,
                                            corpus.num_attributes())
            judge.fit(corpus.sequences, corpus.labels)
            lm = evalsuite.train_lm(corpus, evalsuite.LmConfig(seed=args.seed))
            metrics = evalsuite.transfer_eval(
                bundle, corpus, judge, lm, evalsuite.LmConfig(seed=args.seed))
            for name, value in metrics.items():
                report.add(name, value)
        else:
            raise ConfigError(f"unknown eval suite {suite!r}")
        out_lines.extend(report.lines())
    _emit(out_lines, args.out)
    return EXIT_OK


def cmd_synth(args):
    rng = SeededRng(args.seed)
    corpus = data.synth_corpus("sentiment", args.n, rng)
    os.makedirs(args.out, exist_ok=True)
    corpus.vocab.save(os.path.join(args.out, "vocab.txt"))
    handles = {lbl: open(os.path.join(args.out, f"attr{lbl}.txt"), "w",
                         encoding="utf-8") for lbl in (0, 1)}
    try:
        for seq, lbl in zip(corpus.sequences, corpus.labels):
            handles[lbl].write(" ".join(corpus.vocab.decode(seq)) + "\n")
    finally:
        for fh in handles.values():
            fh.close()
    print(f"wrote {args.n} sentences to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="araelab",
        description="Adversarially regularized autoencoders for discrete data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a preset/config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--mode", choices=["text", "image"])
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="decode codes from the generator or an "
                                      "autoencoder code fit")
    p.add_argument("checkpoint")
    p.add_argument("--source", choices=["gan", "ae-gaussian"], default="gan")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", help="decode along a latent path")
    p.add_argument("checkpoint")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("arithmetic", help="attribute offset vectors in "
                                          "latent space")
    p.add_argument("checkpoint")
    p.add_argument("attribute", help="FROM:TO attribute labels, e.g. 0:1")
    p.add_argument("--data", default="synth")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_arithmetic)

    p = sub.add_parser("transfer", help="re-decode inputs under another "
                                        "attribute head")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval", help="run an evaluation suite")
    p.add_argument("checkpoint")
    p.add_argument("--suite", default="moments",
                   choices=["noising", "smoothness", "moments",
                            "reverse-ppl", "transfer", "all"])
    p.add_argument("--baseline", help="autoencoder-only checkpoint for "
                                      "comparative suites")
    p.add_argument("--data", default="synth")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic labeled corpus")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="data/synth")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError, ContractError,
            training.CheckpointFormatError, training.CheckpointCorruptionError,
            training.ArchitectureMismatchError,
            latent.InsufficientDataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
