"""Command-line interface: ``nphmm <command> [options]``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.
Options can also come from a ``key=value`` file given with ``--config``; flags
given on the command line take precedence.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import chebcore as cc
from . import hmm_sim, perturbation, spectral
from .errors import EmptyInput, NumericalError, OutOfDomain, ValidationError

logger = logging.getLogger("nphmm")

THREADS_ENV = "NPHMM_THREADS"
CSV_HEADER = ("N", "seed", "l1", "pred_err", "true_err", "seconds")
L1_POINTS = 257


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def read_sequences(path) -> list:
    """One sequence per line, whitespace separated, ``#`` starts a comment."""
    seqs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                vals = np.array([float(t) for t in text.split()])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(vals)) or vals.min() < 0.0 or vals.max() > 1.0:
                raise OutOfDomain(f"{path}:{lineno}: observations must lie in [0, 1]")
            seqs.append(vals)
    if not seqs:
        raise EmptyInput(f"{path}: no sequences")
    return seqs


def format_sequences(obs) -> str:
    return "".join(" ".join(f"{x:.17g}" for x in row) + "\n" for row in obs)


def read_config(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in text.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _float_list(text: str) -> list:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text: str) -> list:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _learn_config(args) -> spectral.LearnConfig:
    return spectral.LearnConfig(bandwidths=(args.h1, args.h21, args.h321), folds=args.folds,
                                cv_max_samples=args.cv_max_samples, cross_tol=args.tol)


def cmd_simulate(args, out) -> int:
    if args.model:
        model = hmm_sim.load_model(args.model)
    else:
        model = hmm_sim.synthetic_suite(args.suite, args.seed, stationary=args.stationary)
    obs = hmm_sim.sample(model, args.seq_len, args.n_seqs, args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(format_sequences(obs))
    if args.save_model:
        hmm_sim.save_model(model, args.save_model)
    print(f"wrote {args.n_seqs} sequences of length {args.seq_len} to {args.out}", file=out)
    return 0


def _triples_from(seqs) -> spectral.TripleSet:
    return spectral.make_triples(seqs)


def cmd_train(args, out) -> int:
    seqs = read_sequences(args.data)
    triples = _triples_from(seqs)
    if len(triples) < args.m:
        raise ValidationError(f"need at least m={args.m} triples, got {len(triples)}")
    rep = spectral.learn(triples, args.m, _learn_config(args))
    spectral.save_rep(rep, args.out)
    print("sigma: " + " ".join(f"{s:.6g}" for s in rep.sigma), file=out)
    print("bandwidths: h1={:.6g} h21={:.6g} h321={:.6g}".format(*rep.bandwidths), file=out)
    print(f"triples: {len(triples)}", file=out)
    return 0


def cmd_density(args, out) -> int:
    rep = spectral.load_rep(args.model)
    seq = np.array(args.observations, dtype=float)
    if seq.size == 0:
        raise EmptyInput("no observations given")
    if seq.min() < 0.0 or seq.max() > 1.0:
        raise OutOfDomain("observations must lie in [0, 1]")
    print(f"joint {spectral.joint_density(rep, seq):.12g}", file=out)
    s = spectral.init_state(rep)
    for t, x in enumerate(seq):
        if t:
            print(f"conditional {t + 1} {spectral.conditional_density(rep, s, x):.12g}", file=out)
        s = spectral.update_state(rep, s, x)
    return 0


def cmd_predict(args, out) -> int:
    rep = spectral.load_rep(args.model)
    for hist in read_sequences(args.history):
        print(f"{spectral.predict_next(rep, hist, args.method):.12g}", file=out)
    return 0


def _cell_seeds(seed: int, n: int) -> tuple:
    train = int(np.random.SeedSequence([seed, n, 1]).generate_state(1)[0])
    test = int(np.random.SeedSequence([seed, 2]).generate_state(1)[0])
    return train, test


def benchmark_cell(suite: str, n: int, seed: int, n_test: int,
                   config: spectral.LearnConfig, timing: bool = True) -> tuple:
    """One benchmark row ``(N, seed, l1, pred_err, true_err, seconds)``.

    The true model and the test set depend only on ``seed``; the training
    triples depend on ``(seed, N)``. Errors are means over the test sequences of
    the L1 distance between the learned and true one-step conditionals and of
    the absolute error of the conditional means as predictors of ``x6``.
    """
    model = hmm_sim.synthetic_suite(suite, seed)
    train_seed, test_seed = _cell_seeds(seed, n)
    triples = spectral.TripleSet(hmm_sim.sample(model, 3, n, train_seed))
    test = hmm_sim.sample(model, 6, n_test, test_seed)
    t0 = time.perf_counter()
    rep = spectral.learn(triples, model.m, config)
    seconds = time.perf_counter() - t0 if timing else 0.0
    xq, wq = cc.quadrature(L1_POINTS, cc.UNIT)
    means = model.emission_means()
    l1, pe, te = [], [], []
    for seq in test:
        hist, target = seq[:5], seq[5]
        v = hmm_sim.predictive_state(model, hist)
        s, _ = spectral.filter_history(rep, hist)
        est = spectral.conditional_density(rep, s, xq)
        mass = float(wq @ est)
        est = est / mass if mass > 0 else est
        l1.append(float(wq @ np.abs(est - model.emission_densities(xq) @ v)))
        pe.append(abs(spectral.predict_next(rep, hist) - target))
        te.append(abs(float(v @ means) - target))
    return (n, seed, float(np.mean(l1)), float(np.mean(pe)), float(np.mean(te)), seconds)


def run_benchmark(suite, n_grid, seeds, n_test, config, timing=True, threads=1) -> list:
    cells = [(n, s) for n in n_grid for s in seeds]
    work = lambda c: benchmark_cell(suite, c[0], c[1], n_test, config, timing)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(work, cells))
    else:
        rows = [work(c) for c in cells]
    return sorted(rows, key=lambda r: (r[0], r[1]))


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for n, seed, l1, pe, te, sec in rows:
        w.writerow([n, seed, f"{l1:.17g}", f"{pe:.17g}", f"{te:.17g}", f"{sec:.6f}"])
    return buf.getvalue()


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"{THREADS_ENV} must be positive")
    return n


def cmd_benchmark(args, out) -> int:
    rows = run_benchmark(args.suite, args.N, args.seeds, args.n_test, _learn_config(args),
                         timing=not args.no_timing, threads=_threads())
    text = format_csv(rows)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    print(text, end="", file=out)
    return 0


def cmd_verify(args, out) -> int:
    lemmas = ("weyl", "wedin", "pinv") if args.lemma == "all" else (args.lemma,)
    bad = 0
    for lemma in lemmas:
        res = perturbation.run_suite(lemma, args.instances, args.seed)
        bad += res.violations
        print(f"{lemma}: instances={len(res.reports)} violations={res.violations} "
              f"min_slack={res.min_slack:.3e} oracle_rel_err={res.oracle_max_rel_err:.3e}",
              file=out)
        if args.verbose:
            for i, r in enumerate(res.reports):
                print(f"  {i:3d} lhs={r.lhs:.6e} rhs={r.rhs:.6e} slack={r.slack:.3e} "
                      f"passed={r.passed}", file=out)
    return 0 if bad == 0 else 3


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_learn_options(p):
    p.add_argument("--h1", type=_positive(float), help="fixed bandwidth of the marginal estimate")
    p.add_argument("--h21", type=_positive(float), help="fixed bandwidth of the pair estimate")
    p.add_argument("--h321", type=_positive(float), help="fixed bandwidth of the triple estimate")
    p.add_argument("--folds", type=_positive(int), default=5)
    p.add_argument("--cv-max-samples", type=_positive(int), default=2000)
    p.add_argument("--tol", type=_positive(float), default=1e-10,
                   help="cross approximation tolerance")


def build_parser():
    parser = argparse.ArgumentParser(prog="nphmm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("simulate", help="sample sequences from a model")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--suite", choices=["m1", "m4", "m8"], default="m4")
    src.add_argument("--model", help="model JSON file")
    p.add_argument("--seq-len", type=_positive(int), required=False, default=3)
    p.add_argument("--n-seqs", type=_positive(int), default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stationary", action="store_true")
    p.add_argument("--save-model", help="also write the generating model as JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)
    subs["simulate"] = p

    p = sub.add_parser("train", help="learn an observable representation")
    p.add_argument("--data", required=True)
    p.add_argument("--m", type=_positive(int), required=True)
    p.add_argument("--out", required=True)
    _add_learn_options(p)
    p.set_defaults(func=cmd_train)
    subs["train"] = p

    p = sub.add_parser("density", help="joint and conditional densities of a sequence")
    p.add_argument("--model", required=True)
    p.add_argument("observations", nargs="+", type=float)
    p.set_defaults(func=cmd_density)
    subs["density"] = p

    p = sub.add_parser("predict", help="one-step predictions for each history line")
    p.add_argument("--model", required=True)
    p.add_argument("--history", required=True)
    p.add_argument("--method", choices=["mean", "mode"], default="mean")
    p.set_defaults(func=cmd_predict)
    subs["predict"] = p

    p = sub.add_parser("benchmark", help="synthetic consistency benchmark, CSV output")
    p.add_argument("--suite", choices=["m1", "m4", "m8"], default="m4")
    p.add_argument("--N", type=_int_list, default=[500, 2000, 8000])
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--n-test", type=_positive(int), default=200)
    p.add_argument("--no-timing", action="store_true",
                   help="write 0 in the seconds column for byte-reproducible output")
    p.add_argument("--out", required=True)
    _add_learn_options(p)
    p.set_defaults(func=cmd_benchmark)
    subs["benchmark"] = p

    p = sub.add_parser("verify", help="randomized perturbation bound suites")
    p.add_argument("--lemma", choices=["all", "weyl", "wedin", "pinv"], default="all")
    p.add_argument("--instances", type=_positive(int), default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    subs["verify"] = p

    for p in subs.values():
        p.add_argument("--config", help="key=value file; command-line flags win")
    return parser, subs


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _apply_config(subparser, path):
    cfg = read_config(path)
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in cfg.items():
        if key not in known or key in ("help", "config", "func"):
            raise ValidationError(f"{path}: unknown key {key!r}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            low = value.lower()
            if low not in _TRUE | _FALSE:
                raise ValidationError(f"{path}: {key} must be true or false")
            defaults[key] = low in _TRUE
        else:
            defaults[key] = value   # argparse converts string defaults with the option type
    subparser.set_defaults(**defaults)


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            _apply_config(subs[args.command], args.config)
            args = parser.parse_args(argv)
        return args.func(args, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
