"""Command line pipeline: synth -> train -> subspace -> score -> eval.

Settings come from an INI config file (sections [dataset], [network],
[train], [subspace], [score], [eval]; "key = value" entries) and can be
overridden by flags. Exit codes: 0 on success, 2 for configuration
problems, 3 for numeric failures.
"""

import argparse
import configparser
import math
import os
import sys

from . import __version__, metrics, synth
from .linalg import NumericError
from .model import (Network, accuracy, load_network, mean_loss, parse_layer_text,
                    save_network, train_sgd)
from .scorer import (NORM_ORDERS, PSEUDO_LABELS, VARIANTS, ScoreConfig, score_batch,
                     write_scores_csv)
from .subspace import (DEFAULT_EPS_TH, load_subspace, sample_per_class, save_subspace,
                       subspace_for_layer)


class ConfigError(Exception):
    """Bad config file, flag value, or input artifact."""


def _load_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        loaded = parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError("cannot parse %s: %s" % (path, exc))
    if not loaded:
        raise ConfigError("cannot read config file %s" % path)
    return parser


def _setting(args, cfg, section, key, default, cast=str):
    """Flag wins over config file wins over default; casts with diagnostics."""
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    if cfg is not None and cfg.has_option(section, key):
        raw = cfg.get(section, key)
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError("bad value for [%s] %s = %r: %s" % (section, key, raw, exc))
    if default is None:
        raise ConfigError("missing required setting [%s] %s" % (section, key))
    return default


def _parse_norm(text):
    text = str(text).strip().lower()
    if text in ("inf", "infinity"):
        return math.inf
    value = float(text)
    if not value > 0:
        raise ValueError("norm order must be positive or inf")
    return value


def _parse_norm_list(text):
    return [_parse_norm(part) for part in str(text).split(",") if part.strip()]


def _parse_int_list(text):
    return [int(part) for part in str(text).split(",") if part.strip()]


def _parse_str_list(text):
    return [part.strip() for part in str(text).split(",") if part.strip()]


def _parse_float_vector(text):
    return [float(part) for part in str(text).split(",") if part.strip()]


def _parse_layers(text):
    specs = [seg.strip() for seg in str(text).split(";") if seg.strip()]
    if not specs:
        raise ValueError("empty layer list")
    return [parse_layer_text(seg) for seg in specs]


def _load_split(data_dir, name):
    prefix = os.path.join(data_dir, name)
    if not os.path.exists(prefix + ".gomx"):
        raise ConfigError("dataset split %r not found under %s" % (name, data_dir))
    return synth.load_dataset(prefix)


def cmd_synth(args):
    cfg = _load_config(args.config)
    generator = _setting(args, cfg, "dataset", "generator", None)
    seed = _setting(args, cfg, "dataset", "seed", 0, int)
    n_train = _setting(args, cfg, "dataset", "n_train", None, int)
    n_id = _setting(args, cfg, "dataset", "n_id", None, int)
    n_ood = _setting(args, cfg, "dataset", "n_ood", None, int)
    d = _setting(args, cfg, "dataset", "d", None, int)
    if generator == "planted_subspace":
        splits = synth.gen_planted_subspace(
            d=d, k=_setting(args, cfg, "dataset", "k", None, int),
            n_train=n_train, n_id=n_id, n_ood=n_ood,
            ood_energy=_setting(args, cfg, "dataset", "ood_energy", 1.0, float),
            seed=seed)
    elif generator == "gaussian_blobs":
        splits = synth.gen_gaussian_blobs(
            classes=_setting(args, cfg, "dataset", "classes", 2, int),
            d=d, spread=_setting(args, cfg, "dataset", "spread", 1.0, float),
            shift_ood=_setting(args, cfg, "dataset", "shift", None, _parse_float_vector),
            n_train=n_train, n_id=n_id, n_ood=n_ood, seed=seed)
    else:
        raise ConfigError("unknown generator %r" % (generator,))
    os.makedirs(args.out, exist_ok=True)
    for split in splits:
        synth.save_dataset(split, os.path.join(args.out, split.role))
    print("wrote %s/{train,id_test,ood_test}" % args.out)
    return 0


def cmd_train(args):
    cfg = _load_config(args.config)
    layers = _setting(args, cfg, "network", "layers", None, _parse_layers)
    loss = _setting(args, cfg, "network", "loss", None)
    seed = _setting(args, cfg, "train", "seed", 0, int)
    net = Network(layers=layers, loss=loss, seed=seed)
    train = _load_split(args.data, "train")
    trained = train_sgd(
        net, train,
        lr=_setting(args, cfg, "train", "lr", 0.1, float),
        epochs=_setting(args, cfg, "train", "epochs", 100, int),
        batch=_setting(args, cfg, "train", "batch", 16, int),
        seed=seed)
    save_network(trained, args.out)
    print("trained %d layers, train loss %.6g, train accuracy %.4f, wrote %s"
          % (len(trained.layers), mean_loss(trained, train), accuracy(trained, train),
             args.out))
    return 0


def _suffixed(out, suffix):
    root, ext = os.path.splitext(out)
    return "%s.%s%s" % (root, suffix, ext or ".gosub")


def cmd_subspace(args):
    cfg = _load_config(args.config) if args.config else None
    net = load_network(args.model)
    train = _load_split(args.data, "train")
    eps_th = _setting(args, cfg, "subspace", "eps_th", DEFAULT_EPS_TH, float)
    n_per_class = _setting(args, cfg, "subspace", "n_per_class", 10, int)
    seeds = _setting(args, cfg, "subspace", "seeds", [0, 1, 2, 3, 4], _parse_int_list)
    layer_text = str(_setting(args, cfg, "subspace", "layer", "last"))
    if layer_text == "all":
        layers = list(range(len(net.layers)))
    elif layer_text == "last":
        layers = [len(net.layers) - 1]
    else:
        layers = [int(layer_text)]
    for seed in seeds:
        for layer in layers:
            sub = subspace_for_layer(net, train, layer, n_per_class=n_per_class,
                                     seed=seed, eps_th=eps_th)
            path = args.out
            if len(layers) > 1:
                path = _suffixed(path, "l%d" % layer)
            if len(seeds) > 1:
                path = _suffixed(path, "s%d" % seed)
            save_subspace(sub, path)
            print("seed %d layer %d: rank %d of dimension %d, wrote %s"
                  % (seed, layer, sub.k, sub.dim, path))
    return 0


def cmd_score(args):
    cfg = _load_config(args.config) if args.config else None
    net = load_network(args.model)
    data = _load_split(args.data, args.split)
    subs = [load_subspace(path) for path in (args.subspace or [])]
    score_cfg = ScoreConfig(
        norm_order=_setting(args, cfg, "score", "norm", 2.0, _parse_norm),
        variant=_setting(args, cfg, "score", "variant", "last_layer"),
        pseudo_label=_setting(args, cfg, "score", "pseudo_label", "uniform"))
    records = score_batch(net, subs, data.inputs, score_cfg)
    write_scores_csv(records, args.out)
    print("scored %d samples, wrote %s" % (len(records), args.out))
    return 0


def _needed_layers(net, variants):
    gradient_variants = [v for v in variants if v in ("last_layer", "all_layers")]
    if any(v == "all_layers" for v in gradient_variants):
        return list(range(len(net.layers)))
    if gradient_variants:
        return [len(net.layers) - 1]
    return []


def _run_eval(args, variants, norms, n_per_class_list):
    cfg = _load_config(args.config) if args.config else None
    net = load_network(args.model)
    train = _load_split(args.data, "train")
    id_test = _load_split(args.data, "id_test")
    ood_test = _load_split(args.data, "ood_test")
    seeds = _setting(args, cfg, "eval", "seeds", [0, 1, 2, 3, 4], _parse_int_list)
    eps_th = _setting(args, cfg, "subspace", "eps_th", DEFAULT_EPS_TH, float)
    tpr_target = _setting(args, cfg, "eval", "tpr_target", 0.95, float)
    pseudo_label = _setting(args, cfg, "score", "pseudo_label", "uniform")
    average_scores = bool(getattr(args, "average_scores", False))

    for variant in variants:
        if variant not in VARIANTS:
            raise ConfigError("unknown variant %r, expected one of: %s"
                              % (variant, ", ".join(VARIANTS)))

    rows = []
    for n_per_class in n_per_class_list:
        layers = _needed_layers(net, variants)
        per_seed_subs = {
            seed: [subspace_for_layer(net, train, layer, n_per_class=n_per_class,
                                      seed=seed, eps_th=eps_th)
                   for layer in layers]
            for seed in seeds
        }
        for variant in variants:
            variant_norms = norms if variant not in ("msp", "energy") else [2.0]
            for norm in variant_norms:
                score_cfg = ScoreConfig(norm_order=norm, variant=variant,
                                        pseudo_label=pseudo_label)
                per_seed_scores = []
                for seed in seeds:
                    subs = per_seed_subs[seed]
                    id_scores = [r.score for r in score_batch(net, subs, id_test.inputs, score_cfg)]
                    ood_scores = [r.score for r in score_batch(net, subs, ood_test.inputs, score_cfg)]
                    per_seed_scores.append((seed, id_scores, ood_scores))
                if average_scores:
                    n_seeds = len(per_seed_scores)
                    id_mean = [sum(s[1][i] for s in per_seed_scores) / n_seeds
                               for i in range(len(per_seed_scores[0][1]))]
                    ood_mean = [sum(s[2][i] for s in per_seed_scores) / n_seeds
                                for i in range(len(per_seed_scores[0][2]))]
                    per_seed_scores = [(-1, id_mean, ood_mean)]
                for seed, id_scores, ood_scores in per_seed_scores:
                    row = {"variant": variant, "norm_order": norm,
                           "n_per_class": n_per_class, "seed": seed}
                    row.update(metrics.evaluate_detector(id_scores, ood_scores, tpr_target))
                    rows.append(row)

    snapshot = {
        "model": os.path.basename(args.model),
        "data": os.path.basename(os.path.normpath(args.data)),
        "seeds": list(seeds),
        "variants": list(variants),
        "norms": [repr(n) for n in norms],
        "n_per_class": list(n_per_class_list),
        "eps_th": eps_th,
        "tpr_target": tpr_target,
        "pseudo_label": pseudo_label,
        "average_scores": average_scores,
    }
    if getattr(args, "study", None):
        snapshot["study"] = args.study
    report = metrics.build_report(snapshot, rows)
    metrics.save_report(report, args.out)
    csv_path = os.path.splitext(args.out)[0] + ".csv"
    metrics.save_report_csv(report, csv_path)
    print("wrote %s and %s (%d result rows)" % (args.out, csv_path, len(rows)))
    return 0


def cmd_eval(args):
    cfg = _load_config(args.config) if args.config else None
    variants = _setting(args, cfg, "eval", "variants", ["last_layer"], _parse_str_list)
    norms = _setting(args, cfg, "eval", "norms", [2.0], _parse_norm_list)
    n_per_class = _setting(args, cfg, "subspace", "n_per_class", 10, int)
    return _run_eval(args, variants, norms, [n_per_class])


STUDIES = ("norms", "layers", "nosvd", "samples_per_class")


def cmd_ablate(args):
    """One study per run: norms sweep, layer comparison, SVD on/off, or S_n."""
    cfg = _load_config(args.config) if args.config else None
    study = args.study
    n_per_class = _setting(args, cfg, "subspace", "n_per_class", 10, int)
    if study == "norms":
        # the sweep axis comes from the flag or the study default, never
        # from the config file, so a configured single norm cannot
        # collapse the study
        norms = args.norms if args.norms is not None else list(NORM_ORDERS)
        return _run_eval(args, ["last_layer"], norms, [n_per_class])
    norms = _setting(args, cfg, "eval", "norms", [2.0], _parse_norm_list)
    if study == "layers":
        return _run_eval(args, ["last_layer", "all_layers"], norms, [n_per_class])
    if study == "nosvd":
        return _run_eval(args, ["last_layer", "no_svd"], norms, [n_per_class])
    if study == "samples_per_class":
        counts = args.n_per_class_list if args.n_per_class_list is not None else [5, 10, 20, 40]
        return _run_eval(args, ["last_layer"], norms, counts)
    raise ConfigError("unknown study %r, expected one of: %s" % (study, ", ".join(STUDIES)))


def build_parser():
    parser = argparse.ArgumentParser(prog="gradorth",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version="gradorth %s" % __version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset triple")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and freeze a classifier")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("subspace", help="build representation subspaces, one file per seed")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eps-th", dest="eps_th", type=float)
    p.add_argument("--n-per-class", dest="n_per_class", type=int)
    p.add_argument("--seeds", type=_parse_int_list, help="comma-separated, default 0-4")
    p.add_argument("--layer", help='"last", "all", or a layer index')
    p.set_defaults(func=cmd_subspace)

    p = sub.add_parser("score", help="score one dataset split")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="id_test",
                   choices=("train", "id_test", "ood_test"))
    p.add_argument("--subspace", action="append", help="subspace file (repeatable)")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--norm", type=_parse_norm)
    p.add_argument("--pseudo-label", dest="pseudo_label", choices=PSEUDO_LABELS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    for name, func, help_text in (
            ("eval", cmd_eval, "score both test splits and report metrics"),
            ("ablate", cmd_ablate, "run one ablation study and report its table")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config")
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True, help="report JSON path")
        p.add_argument("--seeds", type=_parse_int_list)
        p.add_argument("--norms", type=_parse_norm_list)
        p.add_argument("--eps-th", dest="eps_th", type=float)
        p.add_argument("--n-per-class", dest="n_per_class", type=int)
        p.add_argument("--tpr-target", dest="tpr_target", type=float)
        p.add_argument("--pseudo-label", dest="pseudo_label", choices=PSEUDO_LABELS)
        p.add_argument("--average-scores", dest="average_scores", action="store_true",
                       default=None, help="average scores across seeds before metrics")
        if name == "eval":
            p.add_argument("--variants", type=_parse_str_list)
        else:
            p.add_argument("--study", required=True,
                           help="norms | layers | nosvd | samples_per_class")
            p.add_argument("--n-per-class-list", dest="n_per_class_list",
                           type=_parse_int_list)
        p.set_defaults(func=func)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return 3
    except (ConfigError, ValueError, OSError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
