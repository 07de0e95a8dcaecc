"""Command line interface: ``sparsecert {train,certify,search,verify}``.

Exit codes: 0 success, 2 validation refusal, 3 verification failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bound import EXPANDED, SIMPLIFIED
from .netcore import CheckpointError, load_checkpoint, save_checkpoint
from .oracles import run_suite
from .search import (
    SearchConfig, _EtaCache, aggregate_sparsity, best_in_grid, certify_config, eps_schedule,
    grid_union_delta, greedy_sparsity_batch, union_grid_sizes,
)
from .train import (
    Dataset, IdxFormatError, TrainConfig, TrainingDiverged, build_priors, load_idx, make_splits,
    synth_dataset, train_model,
)

EXIT_OK, EXIT_REFUSED, EXIT_VERIFY, EXIT_IO = 0, 2, 3, 4


class Refusal(Exception):
    pass


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}") from exc


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma separated list of integers: {text!r}") from exc


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(args, command: str, inputs: dict, canonical: bool) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "canonical")}
    m = {
        "command": command,
        "config": json.loads(json.dumps(config, default=str)),
        "seeds": {"seed": getattr(args, "seed", None)},
        "inputs": inputs,
        "tool_version": __version__,
    }
    if not canonical:
        m["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return m


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------- data


def _add_data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--data-dir", type=Path, help="directory with MNIST IDX training files")
    g.add_argument("--synthetic", type=int, metavar="N", help="use N synthetic samples instead")
    g.add_argument("--synthetic-dim", type=int, default=20)
    g.add_argument("--classes", type=int, default=10)


def _load_data(args) -> tuple[Dataset, dict]:
    if args.synthetic is not None:
        data = synth_dataset(args.synthetic, args.synthetic_dim, args.classes, args.data_seed)
        return data, {"synthetic": [args.synthetic, args.synthetic_dim, args.classes, args.data_seed]}
    if args.data_dir is None:
        raise Refusal("either --data-dir or --synthetic is required")
    img = args.data_dir / "train-images-idx3-ubyte"
    lab = args.data_dir / "train-labels-idx1-ubyte"
    return load_idx(img, lab), {str(img): _sha256(img), str(lab): _sha256(lab)}


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(
        steps=args.steps, batch_size=args.batch_size, learning_rate=args.lr, lam=args.lam,
        seed=args.seed, prior_fraction=args.prior_fraction, val_fraction=args.val_fraction,
    )


# --------------------------------------------------------------- commands


def cmd_train(args) -> int:
    data, inputs = _load_data(args)
    cfg = _train_cfg(args)
    split = make_splits(data, cfg)
    dims = [data.X.shape[1]] + list(args.hidden) + [args.classes if args.synthetic is not None else 10]
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train_log.jsonl", "w") as log:
        p0, p_data = build_priors(dims, split, cfg, log=log)
        model = train_model(split, p_data, cfg, log=log)
    save_checkpoint(p0, out / "prior_zero.spnet")
    save_checkpoint(p_data, out / "prior_data.spnet")
    save_checkpoint(model, out / "model.spnet")
    np.savez(out / "splits.npz", prior=split.prior_idx, train=split.train_idx, val=split.val_idx)
    manifest = _manifest(args, "train", inputs, args.canonical)
    manifest.update({
        "dims": dims,
        "m_x": split.m_x,
        "sizes": {"prior": len(split.prior_set), "train": len(split.train_set), "val": len(split.val_set)},
        "init": "normal(0, 1/fan_in), seed = train seed",
        "outputs": ["prior_zero.spnet", "prior_data.spnet", "model.spnet", "splits.npz", "train_log.jsonl"],
    })
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


def _load_run(args):
    run = args.run
    manifest = json.loads((run / "manifest.json").read_text())
    cfg_echo = manifest["config"]
    ns = argparse.Namespace(**{**cfg_echo, "data_dir": Path(cfg_echo["data_dir"]) if cfg_echo.get("data_dir") else None})
    data, _ = _load_data(ns)
    idx = np.load(run / "splits.npz")
    prior_idx, train_idx = idx["prior"], idx["train"]
    cert_idx = np.concatenate([prior_idx, train_idx]) if args.cert_split == "full" else train_idx
    if np.intersect1d(cert_idx, prior_idx).size:
        raise Refusal(
            f"certification data overlaps the prior slice in {np.intersect1d(cert_idx, prior_idx).size} samples"
        )
    cert = data.subset(np.sort(cert_idx))
    net = load_checkpoint(args.model or run / "model.spnet")
    prior_path = args.prior_file or run / ("prior_data.spnet" if args.prior == "data" else "prior_zero.spnet")
    prior = load_checkpoint(prior_path)
    if prior.dims != net.dims:
        raise Refusal(f"prior dims {prior.dims} differ from model dims {net.dims}")
    return net, prior, cert, float(manifest["m_x"]), manifest


def cmd_certify(args) -> int:
    net, prior, cert, m_x, run_manifest = _load_run(args)
    modes = [EXPANDED, SIMPLIFIED] if args.mode == "both" else [args.mode]
    cfg = SearchConfig([args.eps_bar], [args.alpha], args.eta_grid_size, args.delta)
    delta_red = grid_union_delta(args.delta, union_grid_sizes(cfg, net.dims))
    S = greedy_sparsity_batch(net, cert.X, eps_schedule(args.eps_bar, net.depth), m_x,
                              eta_fn=_EtaCache(net, args.eta_grid_size))
    caps = aggregate_sparsity(S, args.alpha, net.depth)
    reports = {}
    for mode in modes:
        rep = certify_config(net, prior, cert.X, cert.y, m_x, args.eps_bar, caps, args.alpha,
                             args.eta_grid_size, delta_red, mode)
        reports[mode] = rep.to_dict()
    manifest = _manifest(args, "certify", {"run": str(args.run)}, args.canonical)
    payload = {"manifest": manifest, "prior": args.prior, "delta_red": delta_red, "reports": reports}
    _write_json(args.out, payload)
    for mode, rep in reports.items():
        print(f"{mode}: bound {rep['final_bound_raw']:.6g} (clamped {rep['final_bound_clamped']:.6g})")
    return EXIT_OK


def _histogram(values: np.ndarray, bins: int = 20):
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return counts, edges


def cmd_search(args) -> int:
    net, prior, cert, m_x, _ = _load_run(args)
    cfg = SearchConfig(args.eps_grid, args.alpha_grid, args.eta_grid_size, args.delta, args.mode)
    res = best_in_grid(net, prior, cert.X, cert.y, m_x, cfg)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, "search", {"run": str(args.run)}, args.canonical)
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "search.json", {"manifest": "manifest.json", "prior": args.prior, **res.to_dict()})
    _write_json(out / "best_report.json", {"manifest": "manifest.json", **res.best.to_dict()})
    eps_keys = list(res.kappa)
    with open(out / "kappa.csv", "w") as f:
        f.write("# manifest=manifest.json\n")
        f.write("sample," + ",".join(f"kappa_eps_{e:g}" for e in eps_keys) + "\n")
        cols = np.stack([res.kappa[e] for e in eps_keys], axis=1)
        for i, row in enumerate(cols):
            f.write(f"{i}," + ",".join(f"{v:.10g}" for v in row) + "\n")
    with open(out / "kappa_hist.csv", "w") as f:
        f.write("# manifest=manifest.json\n")
        f.write("eps_bar,bin_lo,bin_hi,count\n")
        for e in eps_keys:
            counts, edges = _histogram(res.kappa[e])
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                f.write(f"{e:g},{lo:.6g},{hi:.6g},{int(c)}\n")
    b = res.best
    print(f"best bound {b.final_bound_raw:.6g} at eps_bar={b.extras['eps_bar']:g} "
          f"alpha={b.extras['alpha']:g} s={b.hp.s} (delta_red={res.delta_red:.3g})")
    return EXIT_OK


def cmd_verify(args) -> int:
    reports = run_suite(args.trials, args.seed)
    payload = {
        "manifest": _manifest(args, "verify", {}, args.canonical),
        "reports": [r.to_dict() for r in reports],
    }
    if args.out:
        _write_json(args.out, payload)
    for r in reports:
        print(f"{r.name}: {r.verdict} ({r.successes}/{r.trials})")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsecert", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the data prior and the model")
    _add_data_args(t)
    t.add_argument("--hidden", type=_ints, default=[100], help="hidden widths, e.g. 100 or 100,100")
    t.add_argument("--steps", type=int, default=5000)
    t.add_argument("--batch-size", type=int, default=100)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--lam", type=float, default=1.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--data-seed", type=int, default=0)
    t.add_argument("--prior-fraction", type=float, default=0.05)
    t.add_argument("--val-fraction", type=float, default=5000 / 60000)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--canonical", action="store_true", help="omit timestamps for byte-stable output")
    t.set_defaults(func=cmd_train)

    def run_args(q):
        q.add_argument("--run", type=Path, required=True, help="output directory of 'train'")
        q.add_argument("--prior", choices=["data", "zero"], default="data")
        q.add_argument("--prior-file", type=Path)
        q.add_argument("--model", type=Path)
        q.add_argument("--cert-split", choices=["train", "full"], default="train",
                       help="'full' includes the prior slice and is refused")
        q.add_argument("--delta", type=float, default=0.05)
        q.add_argument("--eta-grid-size", type=int, default=8)
        q.add_argument("--canonical", action="store_true")

    c = sub.add_parser("certify", help="bound for one (eps_bar, alpha) configuration")
    run_args(c)
    c.add_argument("--mode", choices=[EXPANDED, SIMPLIFIED, "both"], default=EXPANDED)
    c.add_argument("--eps-bar", type=float, default=0.1)
    c.add_argument("--alpha", type=float, default=0.0)
    c.add_argument("--out", type=Path, required=True)
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("search", help="best-in-grid bound search")
    run_args(s)
    s.add_argument("--mode", choices=[EXPANDED, SIMPLIFIED], default=EXPANDED)
    s.add_argument("--eps-grid", type=_floats, default=[1e-4, 1e-3, 1e-2, 0.1, 0.3, 1.0])
    s.add_argument("--alpha-grid", type=_floats, default=[0.0, 0.01, 0.05, 0.1])
    s.add_argument("--out-dir", type=Path, required=True)
    s.set_defaults(func=cmd_search)

    v = sub.add_parser("verify", help="run the oracle suite")
    v.add_argument("--trials", type=int, help="trials per check (default: full suite sizes)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", type=Path)
    v.add_argument("--canonical", action="store_true")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Refusal as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (ValueError, TrainingDiverged) as exc:
        if isinstance(exc, (IdxFormatError, CheckpointError)):
            print(f"I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
