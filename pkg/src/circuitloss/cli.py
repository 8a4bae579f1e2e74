"""Command-line entry point.

One subcommand per pipeline stage, JSON-lines output by default (pass
--human for a plain formatter). Exit codes: 0 success, 1 usage error,
2 computation error. Every stochastic subcommand requires --seed and
reproduces byte-identical output for identical inputs.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import circuit as circuit_mod
from . import compiler, fidelity, formula, models, oracle, pseudo, wmc

USAGE_ERROR = 1
COMPUTATION_ERROR = 2

_COMPUTATION_ERRORS = (
    formula.FormulaError, circuit_mod.CircuitError, compiler.CompileError,
    wmc.WmcError, pseudo.PseudoError, models.ModelError,
    models.TrainingError, fidelity.FidelityError,
)


class UsageError(Exception):
    pass


def _emit(obj: dict, human: bool) -> None:
    if human:
        for key in sorted(obj):
            print(f"{key}: {obj[key]}")
    else:
        print(json.dumps(obj, sort_keys=True))


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _require_file(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file: {path}")
    return p


def _load_circuit(path: str) -> circuit_mod.Circuit:
    return circuit_mod.read_nnf(_require_file(path, "--circuit").read_text())


def _load_model(path: str):
    return models.read_model(_require_file(path, "--model").read_text())


def _load_weights(path: str, var_count: int) -> wmc.WeightMap:
    return wmc.read_weights(_require_file(path, "--weights").read_text(),
                            var_count)


def _parse_order(name: str, f: formula.Formula) -> compiler.VarOrder:
    if name == "lex":
        return compiler.VarOrder.lexicographic(f.var_count)
    if name == "mff":
        return compiler.VarOrder.most_frequent_first(f)
    if name.startswith("explicit:"):
        perm = [int(x) for x in name.split(":", 1)[1].split(",")]
        return compiler.VarOrder.explicit(perm)
    raise UsageError(f"--order must be lex, mff, or explicit:<perm>, "
                     f"got {name!r}")


def _input_formula(args) -> formula.Formula:
    given_file = getattr(args, "infile", None)
    given_template = getattr(args, "template", None)
    if (given_file is None) == (given_template is None):
        raise UsageError("provide exactly one of --in or --template")
    if given_file is not None:
        return formula.parse_dimacs(_require_file(given_file, "--in").read_text())
    params = {}
    if args.template == "latin_square":
        if args.n is None:
            raise UsageError("latin_square needs --n")
        params = {"n": args.n, "boxes": args.boxes}
    elif args.template == "grid_path":
        if args.rows is None or args.cols is None:
            raise UsageError("grid_path needs --rows and --cols")
        params = {"rows": args.rows, "cols": args.cols}
    elif args.template == "choose_k":
        if args.n is None or args.k is None:
            raise UsageError("choose_k needs --n and --k")
        params = {"n": args.n, "k": args.k}
    elif args.template == "banned_patterns":
        if args.alphabet is None or args.seq_len is None or not args.pattern:
            raise UsageError(
                "banned_patterns needs --alphabet, --seq-len and --pattern")
        patterns = [tuple(int(x) for x in p.split(",")) for p in args.pattern]
        params = {"alphabet_size": args.alphabet, "patterns": patterns,
                  "seq_len": args.seq_len}
    else:
        raise UsageError(f"unknown template {args.template!r}")
    return formula.make_template(args.template, **params).formula


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_compile(args, human: bool) -> int:
    f = _input_formula(args)
    order = _parse_order(args.order, f)
    c = compiler.compile_formula(f, order, node_budget=args.budget)
    Path(args.out).write_text(circuit_mod.write_nnf(c))
    _emit({"nodes": len(c), "edges": c.edge_count, "vars": c.var_count,
           "model_count": circuit_mod.model_count(c)}, human)
    return 0


def cmd_check(args, human: bool) -> int:
    c = _load_circuit(args.circuit)
    rep = circuit_mod.check_properties(c)
    _emit({"decomposable": rep.decomposable, "smooth": rep.smooth,
           "deterministic": rep.deterministic,
           "determinism_method": rep.determinism_method}, human)
    return 0


def cmd_count(args, human: bool) -> int:
    c = _load_circuit(args.circuit)
    fast = circuit_mod.model_count(c)
    out = {"model_count": fast}
    code = 0
    if args.verify:
        brute = oracle.brute_model_count(c)
        out.update({"oracle_model_count": brute, "ok": fast == brute})
        if not out["ok"]:
            code = COMPUTATION_ERROR
    _emit(out, human)
    return code


def cmd_enumerate(args, human: bool) -> int:
    c = _load_circuit(args.circuit)
    count = 0
    for a in circuit_mod.enumerate_models(c, limit=args.limit):
        _emit({"model": [int(v) for v in a.values]}, human)
        count += 1
    _emit({"count": count}, human)
    return 0


def cmd_wmc(args, human: bool) -> int:
    c = _load_circuit(args.circuit)
    w = _load_weights(args.weights, c.var_count)
    lw = wmc.log_wmc(c, w)
    out = {"log_wmc": _jsonable(lw), "probability": math.exp(lw)}
    code = 0
    if args.verify:
        brute = oracle.brute_log_wmc(c, w.log_pos, w.log_neg)
        diff = abs(math.exp(lw) - math.exp(brute))
        out.update({"oracle_log_wmc": _jsonable(brute),
                    "abs_prob_diff": diff, "ok": diff <= 1e-9})
        if not out["ok"]:
            code = COMPUTATION_ERROR
    _emit(out, human)
    return code


def cmd_sl(args, human: bool) -> int:
    c = _load_circuit(args.circuit)
    w = _load_weights(args.weights, c.var_count)
    loss = wmc.semantic_loss(c, w)
    infinite = math.isinf(loss)
    _emit({"loss": _jsonable(loss), "infinite": infinite}, human)
    return COMPUTATION_ERROR if infinite else 0


def cmd_psl(args, human: bool) -> int:
    c = _load_circuit(args.circuit)
    model = _load_model(args.model)
    cfg = pseudo.PslConfig(samples=args.samples, top_k=args.topk,
                           seed=args.seed)
    result = pseudo.pseudo_semantic_loss(c, model, model.space, cfg,
                                         minimize=args.minimize)
    entropy = float(np.mean([fidelity.entropy_product(t)
                             for t in result.tables]))
    out = {"loss": _jsonable(result.loss),
           "per_sample_log_wmc": _jsonable(result.per_sample_log_wmc),
           "entropy_bits": entropy, "infinite": result.infinite}
    code = 0
    if args.verify:
        probs = [oracle.brute_neighborhood_prob(c, t.log_cond, model.space)
                 for t in result.tables]
        brute_loss = -math.log(sum(probs) / len(probs)) \
            if sum(probs) > 0 else math.inf
        if args.minimize:
            mean = sum(probs) / len(probs)
            brute_loss = -math.log1p(-mean) if mean < 1.0 else math.inf
        diff = abs(math.exp(-result.loss) - math.exp(-brute_loss))
        out.update({"oracle_loss": _jsonable(brute_loss),
                    "abs_prob_diff": diff, "ok": diff <= 1e-9})
        if not out["ok"]:
            code = COMPUTATION_ERROR
    _emit(out, human)
    if result.infinite:
        return COMPUTATION_ERROR
    return code


def cmd_sample(args, human: bool) -> int:
    model = _load_model(args.model)
    rng = np.random.default_rng(args.seed)
    for _ in range(args.count):
        a = model.sample(rng)
        _emit({"categories": list(a.categories)}, human)
    return 0


def cmd_train(args, human: bool) -> int:
    c = _load_circuit(args.circuit) if args.circuit else None
    if args.model_in:
        model = _load_model(args.model_in)
    else:
        if not (args.model_type and args.n and args.k):
            raise UsageError(
                "provide --model-in, or --model-type with --n and --k")
        space = formula.CategoricalSpace(args.n, args.k)
        if args.model_type == "factorized":
            model = models.FactorizedModel.uniform(space)
        else:
            model = models.MarkovARModel.uniform(space, args.m)
    dataset = []
    if args.data:
        for lineno, line in enumerate(
                _require_file(args.data, "--data").read_text().splitlines(),
                start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                dataset.append(models.TrainExample(
                    tuple(bool(b) for b in row["mask"]),
                    tuple(int(t) for t in row["target"])))
            except (json.JSONDecodeError, KeyError, TypeError):
                raise UsageError(f"--data line {lineno}: expected "
                                 '{"mask": [...], "target": [...]}') from None
    cfg = models.TrainConfig(
        step_size=args.lr, steps=args.steps, psl_weight=args.psl_weight,
        ce_weight=args.ce_weight, momentum=args.momentum,
        samples=args.samples, seed=args.seed, log_every=args.log_every)
    result = models.train_toy(model, c, dataset, cfg)
    for row in result.metrics:
        _emit({k: _jsonable(v) for k, v in row.items()}, human)
    Path(args.model_out).write_text(models.write_model(result.model))
    _emit({"model_out": args.model_out}, human)
    return 0


def cmd_fidelity(args, human: bool) -> int:
    model = _load_model(args.model)
    c = _load_circuit(args.circuit) if args.circuit else None
    rng = np.random.default_rng(args.seed)
    entropies, kls = [], []
    for sid in range(args.samples):
        y = model.sample(rng)
        t = pseudo.table_from_model(model, y, model.space)
        rep = fidelity.fidelity_report(sid, t, model)
        row = {"sample_id": rep.sample_id,
               "entropy_approx_bits": rep.entropy_approx_bits,
               "entropy_model_bits": rep.entropy_model_bits,
               "kl_bits": _jsonable(rep.kl_bits),
               "kl_infinite": rep.kl_infinite,
               "per_step_entropy_bits": _jsonable(rep.per_step_entropy_bits)}
        if c is not None:
            row["constraint_log_prob"] = _jsonable(
                wmc.log_wmc(c, pseudo.weights_from_table(t, model.space)))
        _emit(row, human)
        entropies.append(rep.entropy_approx_bits)
        kls.append(rep.kl_bits)
    _emit({"aggregate": True,
           "entropy_mean": float(np.mean(entropies)),
           "entropy_std": float(np.std(entropies)),
           "kl_mean": _jsonable(float(np.mean(kls))),
           "kl_std": _jsonable(float(np.std(kls)))}, human)
    return 0


def cmd_oracle(args, human: bool) -> int:
    what = args.what
    if what == "count":
        target = _oracle_target(args)
        _emit({"model_count": oracle.brute_model_count(target)}, human)
        return 0
    if what == "wmc":
        target = _oracle_target(args)
        w = _load_weights(args.weights, target.var_count)
        lw = oracle.brute_log_wmc(target, w.log_pos, w.log_neg)
        _emit({"log_wmc": _jsonable(lw), "probability": math.exp(lw)}, human)
        return 0
    if what == "psl":
        target = _oracle_target(args)
        model = _load_model(args.model)
        rng = np.random.default_rng(args.seed)
        probs = []
        for _ in range(args.samples):
            y = model.sample(rng)
            t = pseudo.table_from_model(model, y, model.space)
            if args.topk is not None:
                t = pseudo.restrict_top_k(t, args.topk)
            probs.append(oracle.brute_neighborhood_prob(
                target, t.log_cond, model.space))
        mean = sum(probs) / len(probs)
        loss = -math.log(mean) if mean > 0 else math.inf
        _emit({"loss": _jsonable(loss),
               "per_sample_probability": probs}, human)
        return COMPUTATION_ERROR if math.isinf(loss) else 0
    if what == "kl":
        model = _load_model(args.model)
        rng = np.random.default_rng(args.seed)
        for sid in range(args.samples):
            y = model.sample(rng)
            t = pseudo.table_from_model(model, y, model.space)
            _emit({"sample_id": sid,
                   "kl_bits": _jsonable(oracle.brute_kl_bits(
                       t.log_cond, model)),
                   "entropy_bits": oracle.brute_entropy_bits(t.log_cond)},
                  human)
        return 0
    raise UsageError(f"unknown oracle target {what!r}")


def _oracle_target(args):
    given_file = getattr(args, "infile", None)
    given_circuit = getattr(args, "circuit", None)
    if (given_file is None) == (given_circuit is None):
        raise UsageError("provide exactly one of --in or --circuit")
    if given_file is not None:
        return formula.parse_dimacs(_require_file(given_file, "--in").read_text())
    return _load_circuit(given_circuit)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="circuitloss",
        description="Constraint compilation, circuit probabilities, and "
                    "neighborhood losses.")
    parser.add_argument("--human", action="store_true",
                        help="plain key: value output instead of JSON lines")
    sub = parser.add_subparsers(dest="command")

    def add_template_flags(p):
        p.add_argument("--in", dest="infile")
        p.add_argument("--template",
                       choices=["latin_square", "grid_path", "choose_k",
                                "banned_patterns"])
        p.add_argument("--n", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--rows", type=int)
        p.add_argument("--cols", type=int)
        p.add_argument("--alphabet", type=int)
        p.add_argument("--seq-len", type=int, dest="seq_len")
        p.add_argument("--pattern", action="append", default=[])
        p.add_argument("--boxes", action="store_true")

    p = sub.add_parser("compile", help="formula -> circuit")
    add_template_flags(p)
    p.add_argument("--order", default="lex")
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, default=10_000_000)

    p = sub.add_parser("check", help="structural property report")
    p.add_argument("--circuit", required=True)

    p = sub.add_parser("count", help="model count of a circuit")
    p.add_argument("--circuit", required=True)
    p.add_argument("--verify", action="store_true")

    p = sub.add_parser("enumerate", help="stream the circuit's models")
    p.add_argument("--circuit", required=True)
    p.add_argument("--limit", type=int, default=1 << 20)

    p = sub.add_parser("wmc", help="weighted model count")
    p.add_argument("--circuit", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--verify", action="store_true")

    p = sub.add_parser("sl", help="semantic loss under given weights")
    p.add_argument("--circuit", required=True)
    p.add_argument("--weights", required=True)

    p = sub.add_parser("psl", help="pseudo-loss around model samples")
    p.add_argument("--circuit", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--minimize", action="store_true")
    p.add_argument("--verify", action="store_true")

    p = sub.add_parser("sample", help="ancestral samples from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("train", help="toy gradient-descent training")
    p.add_argument("--circuit")
    p.add_argument("--model-in", dest="model_in")
    p.add_argument("--model-type", choices=["factorized", "markov"])
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--data")
    p.add_argument("--model-out", dest="model_out", required=True)
    p.add_argument("--lambda", dest="psl_weight", type=float, default=0.0)
    p.add_argument("--ce-weight", dest="ce_weight", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--log-every", dest="log_every", type=int, default=50)
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("fidelity", help="entropy and KL diagnostics")
    p.add_argument("--model", required=True)
    p.add_argument("--circuit")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("oracle", help="brute-force counterparts")
    p.add_argument("what", choices=["count", "wmc", "psl", "kl"])
    p.add_argument("--in", dest="infile")
    p.add_argument("--circuit")
    p.add_argument("--weights")
    p.add_argument("--model")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)

    return parser


_HANDLERS = {
    "compile": cmd_compile, "check": cmd_check, "count": cmd_count,
    "enumerate": cmd_enumerate, "wmc": cmd_wmc, "sl": cmd_sl,
    "psl": cmd_psl, "sample": cmd_sample, "train": cmd_train,
    "fidelity": cmd_fidelity, "oracle": cmd_oracle,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else USAGE_ERROR
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    try:
        return _HANDLERS[args.command](args, args.human)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except _COMPUTATION_ERRORS as e:
        print(json.dumps({"error": {"type": type(e).__name__,
                                    "message": str(e)}}, sort_keys=True))
        return COMPUTATION_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
