"""Command-line interface.

Every command that writes files also writes ``<primary output>.manifest.json``
recording the argv, resolved options, input and output hashes and wall
clock; ``tvkit replay MANIFEST`` reruns the command and checks the outputs
are byte-identical.

Exit codes: 0 ok, 2 configuration or input error, 3 numeric failure,
4 protocol violation (leakage, replay mismatch).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from tvkit import __version__, tvck
from tvkit.blocks import BlockedTensor, CoefficientSet, TaskVector, apply_anisotropic, diff
from tvkit.data import Dataset, TaskSpec, generate, kshot
from tvkit.errors import LeakageError, NumericError, TvkitError
from tvkit.learn import TrainConfig
from tvkit.net import ToyModel

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PROTOCOL = 0, 2, 3, 4


class ProtocolError(TvkitError):
    pass


# ---------------------------------------------------------------- helpers

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return int(args.threads)
    env = os.environ.get("TVKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise TvkitError(f"TVKIT_THREADS must be an integer, got {env!r}") from None
    return 1


def _load_weights(path) -> tuple[ToyModel, BlockedTensor]:
    obj, meta = tvck.load(path, verify=True, with_meta=True)
    if not isinstance(obj, BlockedTensor):
        raise TvkitError(f"{path} does not hold weights")
    if "model" not in meta:
        raise TvkitError(f"{path} lacks the model description in its metadata")
    return ToyModel.from_json(meta["model"]), obj


def _save_weights(path, model: ToyModel, theta: BlockedTensor, extra: dict | None = None) -> None:
    tvck.save(path, theta.astype(np.float32), meta={"model": model.to_json(), **(extra or {})})


def _load_tv(path) -> TaskVector:
    obj = tvck.load(path, verify=True)
    if not isinstance(obj, TaskVector):
        raise TvkitError(f"{path} does not hold a task vector")
    return obj


def _load_dataset(path) -> Dataset:
    """A TaskSpec JSON (generated on the fly) or a dataset TVCK file."""
    p = Path(path)
    if p.suffix == ".json":
        return generate(TaskSpec.read(p))
    obj = tvck.load(p, verify=True)
    if not isinstance(obj, Dataset):
        raise TvkitError(f"{path} does not hold a dataset")
    return obj


def _load_coeffs(path) -> CoefficientSet:
    p = Path(path)
    if p.suffix == ".json":
        d = json.loads(p.read_text(encoding="utf-8"))
        return CoefficientSet.from_json(d)
    obj = tvck.load(p, verify=True)
    if not isinstance(obj, CoefficientSet):
        raise TvkitError(f"{path} does not hold coefficients")
    return obj


def _compose(base: BlockedTensor, coeffs: CoefficientSet, tvs) -> BlockedTensor:
    by_id = {tv.id: tv for tv in tvs}
    missing = [i for i in coeffs.tv_ids if i not in by_id]
    if missing:
        raise TvkitError(f"coefficients reference task vectors that were not given: {missing}")
    tvs = [by_id[i] for i in coeffs.tv_ids]
    if not tvs:
        return base
    if coeffs.K > 1:
        from tvkit.partition import apply_partitioned, make_partitions

        masks = make_partitions(base.specs, coeffs.K, int(coeffs.meta.get("partition_seed", 0)))
        return apply_partitioned(base, coeffs, tvs, masks)
    return apply_anisotropic(base, coeffs, tvs)


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, weight_decay=args.wd, epochs=args.epochs, batch_size=args.batch_size,
                       l1_penalty=getattr(args, "l1", 0.0), seed=args.seed)


def _edited_weights(args, base):
    """--weights W, or --coeffs C with --tv vectors, or the base itself."""
    if getattr(args, "weights", None):
        return _load_weights(args.weights)[1]
    if getattr(args, "coeffs", None):
        return _compose(base, _load_coeffs(args.coeffs), [_load_tv(p) for p in args.tv or []])
    return base


class Run:
    """Tracks inputs and outputs of one command for its manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.start = time.perf_counter()

    def input(self, *paths):
        self.inputs += [str(p) for p in paths if p]
        return paths[0] if len(paths) == 1 else paths

    def output(self, path):
        self.outputs.append(str(path))
        return path

    def manifest(self, path=None):
        if not self.outputs:
            return None
        resolved = {k: v for k, v in vars(self.args).items() if k not in ("func", "manifest")}
        seeds = {k: v for k, v in resolved.items() if "seed" in k}
        man = {
            "tool": "tvkit",
            "version": __version__,
            "command": self.args.command,
            "cwd": os.getcwd(),
            "argv": self.argv,
            "config": resolved,
            "seeds": seeds,
            "threads": _threads(self.args),
            "inputs": {p: _sha256(p) for p in self.inputs if Path(p).is_file()},
            "outputs": {p: _sha256(p) for p in self.outputs},
            "platform": {"python": platform.python_version(), "numpy": np.__version__,
                         "machine": platform.machine(), "system": platform.system()},
            "wall_clock_s": round(time.perf_counter() - self.start, 3),
        }
        path = Path(path or (self.outputs[0] + ".manifest.json"))
        _write_json(path, man)
        return path


# ---------------------------------------------------------------- commands

def cmd_spec(args, run: Run):
    from tvkit import suite

    if args.suite == "arithmetic":
        specs = suite.arithmetic_suite(args.seed)
    elif args.suite == "transfer":
        specs = suite.transfer_suite(args.seed)
    elif args.suite == "control":
        specs = [suite.control_spec(args.seed)]
    else:
        specs = [suite.pretrain_spec(args.seed)]
    if args.shift:
        specs = [s.shifted(args.shift) for s in specs]
    if args.n_test:
        specs = [replace(s, n_test=args.n_test) for s in specs]
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for s in specs:
        p = outdir / f"{s.task_id}.json"
        _write_json(p, s.to_json())
        run.output(p)
    print(f"wrote {len(specs)} task specs to {outdir}")


def cmd_gen(args, run: Run):
    ds = generate(TaskSpec.read(run.input(args.task)))
    tvck.save(run.output(args.out), ds)
    print(f"{ds.task_id}: {len(ds.train)} train / {len(ds.val)} val / {len(ds.test)} test examples")


def cmd_pretrain(args, run: Run):
    from tvkit import suite
    from tvkit.train import finetune

    model = ToyModel(in_dim=suite.IN_DIM, emb_dim=suite.EMB_DIM, width=args.width or suite.WIDTH, depth=args.depth)
    spec = suite.pretrain_spec(args.seed)
    cfg = replace(suite.PRETRAIN_CONFIG, seed=args.seed, epochs=args.epochs)
    data = generate(spec)
    theta = finetune(model, model.init(args.seed), data.train, cfg)
    _save_weights(run.output(args.out), model, theta, {"pretrain_spec": spec.to_json()})
    from tvkit.evalx import accuracy
    print(f"pre-trained accuracy on held-out pre-training data: {accuracy(model, theta, data.test, _threads(args)):.2f}")


def cmd_finetune(args, run: Run):
    from tvkit.evalx import accuracy
    from tvkit.train import finetune

    model, base = _load_weights(run.input(args.base))
    ds = _load_dataset(run.input(args.task))
    cfg = TrainConfig(learning_rate=args.lr, weight_decay=args.wd, epochs=args.epochs, batch_size=args.batch_size,
                      seed=args.seed)
    theta = finetune(model, base, ds.train, cfg)
    _save_weights(run.output(args.out), model, theta, {"task": ds.task_id})
    print(f"{ds.task_id}: test accuracy {accuracy(model, theta, ds.test, _threads(args)):.2f}")


def cmd_lora(args, run: Run):
    from tvkit.lora import finetune_lora

    model, base = _load_weights(run.input(args.base))
    ds = _load_dataset(run.input(args.task))
    cfg = TrainConfig(learning_rate=args.lr, weight_decay=args.wd, epochs=args.epochs, batch_size=args.batch_size,
                      seed=args.seed)
    tv = finetune_lora(model, base, ds.train, args.rank, cfg, id=args.id or ds.task_id)
    tvck.save(run.output(args.out), tv)
    print(f"{tv.id}: LoRA task vector with {tv.num_parameters()} stored parameters")


def cmd_diff(args, run: Run):
    _, base = _load_weights(run.input(args.base))
    _, ft = _load_weights(run.input(args.finetuned))
    meta = tvck.read_meta(args.finetuned)
    tv = diff(ft, base, id=args.id or meta.get("task", "tv"), meta={"task": meta.get("task", "")})
    tvck.save(run.output(args.out), tv)
    print(f"{tv.id}: task vector norm {tv.dense.norm():.4f}")


def _select(args, model, base, tvs, target, candidates_data):
    from tvkit import select

    if not args.strategy:
        return tvs, None, None
    b = args.budget or len(tvs)
    if args.strategy == "random":
        plan = select.select_random(tvs, b, args.seed)
    elif args.strategy == "features":
        plan = select.select_by_features(model, base, candidates_data, target, b)
    else:
        mode = "whole" if args.strategy == "gradient-whole" else "blockwise"
        plan = select.select_by_gradient(model, base, tvs, target, b, mode=mode)
    chosen, mask = select.plan_task_vectors(plan, tvs)
    return chosen, mask, plan


def cmd_learn(args, run: Run):
    from tvkit import learn, tta
    from tvkit.evalx import accuracy

    model, base = _load_weights(run.input(args.base))
    tvs = [_load_tv(run.input(p)) for p in args.tv or []]
    data = [_load_dataset(run.input(p)) for p in args.data]
    if args.split is None:
        args.split = "test" if args.mode.startswith("tta") else "val"
    cfg = _train_config(args)
    masks = None
    if args.K > 1:
        from tvkit.partition import make_partitions
        masks = make_partitions(base.specs, args.K, args.seed)
    common = dict(linearized=args.linearized, K=args.K, masks=masks)
    plan = None
    target = data[0]
    extra_meta = {}
    if args.mode == "add":
        if args.strategy:
            raise TvkitError("--strategy applies to few-shot learning")
        report = learn.learn_addition(model, base, tvs, [d[args.split] for d in data], cfg, **common)
        evals = [(d.task_id, d.test) for d in data]
    elif args.mode == "negate":
        if len(tvs) != 1:
            raise TvkitError("negation takes exactly one --tv")
        if not args.control:
            raise TvkitError("negation needs --control")
        control = _load_dataset(run.input(args.control))
        report = learn.learn_negation(model, base, tvs[0], target[args.split], control[args.split], cfg,
                                      linearized=args.linearized)
        evals = [(target.task_id, target.test), (control.task_id, control.test)]
    elif args.mode == "fewshot":
        tid = args.target_id or target.task_id
        if any(tv.id == tid for tv in tvs):
            raise LeakageError(f"task vector {tid!r} belongs to the few-shot target; leave it out")
        shots = kshot(target, args.k, args.seed).batch(target)
        cand = None
        if args.strategy == "features":
            cand = {}
            for p in args.candidate_data or []:
                d = _load_dataset(run.input(p))
                cand[d.task_id] = d.train
            missing = [tv.id for tv in tvs if tv.id not in cand]
            if missing:
                raise TvkitError(f"feature selection needs --candidate-data for {missing}")
            cand = {tv.id: cand[tv.id] for tv in tvs}
        tvs, trainable, plan = _select(args, model, base, tvs, shots, cand)
        report = learn.learn_fewshot(model, base, tvs, shots, cfg, target_id=tid, k=args.k, trainable=trainable,
                                     **common)
        evals = [(target.task_id, target.test)]
        extra_meta["k"] = args.k
    elif args.mode in ("tta-ufm", "tta-entropy"):
        unl = target[args.split]
        if args.mode == "tta-ufm":
            report = tta.adapt_ufm(model, base, tvs, unl, cfg)
        else:
            report = tta.adapt_entropy(model, base, tvs, unl, cfg)
            for w in report.extra.get("collapse_warnings", []):
                print(f"warning: {w}", file=sys.stderr)
        evals = [(target.task_id, target.test)]
    else:  # pragma: no cover - argparse restricts choices
        raise TvkitError(f"unknown mode {args.mode}")

    out = report.to_json()
    out["mode"] = args.mode
    if plan is not None:
        out["selection"] = plan.to_json()
    out.update(extra_meta)
    _write_json(run.output(args.out), out)
    composed = _compose(base, report.coeffs, tvs)
    weights_out = args.weights_out or str(Path(args.out).with_suffix(".tvck"))
    _save_weights(run.output(weights_out), model, composed, {"coefficients": Path(args.out).name})
    threads = _threads(args)
    for name, split in evals:
        print(f"{name}: zero-shot {accuracy(model, base, split, threads):.2f} -> "
              f"{accuracy(model, composed, split, threads):.2f}")
    if args.mode == "negate":
        from tvkit.evalx import negation_report
        r = negation_report(model, base, composed, target.test, control.test)
        print(f"control retention {r.retention:.3f} ({'pass' if r.passed else 'FAIL'})")


def cmd_eval(args, run: Run):
    from tvkit import evalx

    model, base = _load_weights(run.input(args.base))
    threads = _threads(args)
    if args.coeffs:
        run.input(args.coeffs)
    if args.weights:
        run.input(args.weights)
    for p in args.tv or []:
        run.input(p)
    data = [_load_dataset(run.input(p)) for p in args.data]

    if args.what in ("acc", "relacc"):
        theta = _edited_weights(args, base)
        refs = [None] * len(data)
        if args.what == "relacc":
            if not args.reference or len(args.reference) != len(data):
                raise TvkitError("relacc needs one --reference fine-tuned weight file per --data")
            refs = [_load_weights(run.input(p))[1] for p in args.reference]
        rows = []
        for d, ref in zip(data, refs):
            acc = evalx.accuracy(model, theta, d[args.split], threads)
            rel = evalx.relative_accuracy(acc, evalx.accuracy(model, ref, d[args.split], threads)) if ref else None
            rows.append((d.task_id, acc, rel))
            print(f"{d.task_id}: {acc:.2f}" + (f" ({rel:.2f}% of fine-tuned)" if rel is not None else ""))
        evalx.write_csv(run.output(args.out), evalx.ACCURACY_HEADER, rows)
    elif args.what == "negation":
        if not args.control:
            raise TvkitError("negation evaluation needs --control")
        control = _load_dataset(run.input(args.control))
        theta = _edited_weights(args, base)
        r = evalx.negation_report(model, base, theta, data[0][args.split], control[args.split])
        out = {"target": r.target, "control": r.control, "target_pretrained": r.target_pretrained,
               "control_pretrained": r.control_pretrained, "retention": r.retention, "passed": r.passed}
        _write_json(run.output(args.out), out)
        print(f"target {r.target:.2f} (pre-trained {r.target_pretrained:.2f}), control {r.control:.2f} "
              f"(retention {r.retention:.3f}, {'pass' if r.passed else 'FAIL'})")
    elif args.what == "disentangle":
        tvs = [_load_tv(p) for p in args.tv or []]
        if len(tvs) != len(data) or len(tvs) < 2:
            raise TvkitError("disentangle needs at least two --tv and one --data per vector, in the same order")
        if args.coeffs:
            coeffs = _load_coeffs(args.coeffs)
            method = args.method or "learned"
        elif args.alpha is not None:
            coeffs = float(args.alpha)
            method = args.method or "isotropic"
        else:
            raise TvkitError("disentangle needs --coeffs or --alpha")
        xi = evalx.disentanglement_matrix(model, base, coeffs, tvs, [d[args.split] for d in data])
        n = evalx.write_csv(run.output(args.out), evalx.DISENTANGLE_HEADER,
                            evalx.disentanglement_rows([tv.id for tv in tvs], xi, method))
        print(f"{n} rows; mean off-diagonal xi {evalx.mean_offdiagonal(xi):.2f}%")
    elif args.what == "intrinsic":
        from tvkit import intrinsic, select

        target = data[0]
        if not args.reference:
            raise TvkitError("intrinsic needs --reference (the target's fine-tuned weights)")
        ref_acc = evalx.accuracy(model, _load_weights(run.input(args.reference[0]))[1], target.test, threads)
        tvs = [_load_tv(p) for p in args.tv or []]
        cfg = _train_config(args)
        rows = []
        for d in args.bases:
            if args.basis == "random":
                basis = intrinsic.make_random_basis(base, d, args.seed)
            elif d == 0:
                basis = intrinsic.BasisSet("taskvector", [])
            else:
                plan = select.select_by_gradient(model, base, tvs, target.train, d, mode="blockwise")
                basis = intrinsic.make_tv_basis(tvs, d, plan)
            point = intrinsic.run_subspace_experiment(model, base, basis, target.train, target.test, ref_acc, cfg)
            rows.append(point.row())
            print(f"{point.basis_kind} d={point.d}: {point.abs_acc:.2f} ({point.rel_acc:.2f}% of fine-tuned)")
        evalx.write_csv(run.output(args.out), intrinsic.INTRINSIC_HEADER, rows)


def cmd_replay(args, run: Run):
    man = json.loads(Path(args.manifest_file).read_text(encoding="utf-8"))
    cwd = os.getcwd()
    root = Path(man.get("cwd", cwd))
    for p, h in man.get("inputs", {}).items():
        if not (root / p).is_file() or _sha256(root / p) != h:
            raise ProtocolError(f"input {p} is missing or changed since the manifest was written")
    os.chdir(man.get("cwd", cwd))
    try:
        code = main(man["argv"])
    finally:
        os.chdir(cwd)
    if code != EXIT_OK:
        return code
    bad = [p for p, h in man["outputs"].items() if not (root / p).is_file() or _sha256(root / p) != h]
    if bad:
        raise ProtocolError(f"replay produced different outputs: {bad}")
    print(f"replay ok: {len(man['outputs'])} outputs byte-identical")


# ---------------------------------------------------------------- parser

def _add_train_flags(p, lr=0.1, wd=0.1, epochs=10, batch_size=128):
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--wd", type=float, default=wd)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=batch_size)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tvkit", description="Learn per-block task-vector coefficients.")
    ap.add_argument("--version", action="version", version=f"tvkit {__version__}")
    ap.add_argument("--threads", type=int, default=None, help="evaluation threads (default: $TVKIT_THREADS or 1)")
    ap.add_argument("--manifest", default=None, help="manifest path (default: <first output>.manifest.json)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spec", help="write task specs of a built-in suite")
    p.add_argument("--suite", choices=["arithmetic", "transfer", "control", "pretrain"], default="arithmetic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shift", type=float, default=0.0, help="domain shift for test-time adaptation variants")
    p.add_argument("--n-test", type=int, default=None, help="override test examples per class")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_spec)

    p = sub.add_parser("gen", help="materialise a task spec as a dataset file")
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="pre-train the toy encoder")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune every parameter on one task")
    p.add_argument("--base", required=True)
    p.add_argument("--task", required=True, help="task spec JSON or dataset file")
    _add_train_flags(p, lr=1e-3, wd=0.0, epochs=10, batch_size=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("lora", help="train a low-rank task vector")
    p.add_argument("--base", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--rank", type=int, default=16)
    p.add_argument("--id", default=None)
    _add_train_flags(p, lr=1e-3, wd=0.0, epochs=10, batch_size=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lora)

    p = sub.add_parser("diff", help="task vector = fine-tuned - base")
    p.add_argument("--base", required=True)
    p.add_argument("--finetuned", required=True)
    p.add_argument("--id", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("learn", help="learn coefficients")
    p.add_argument("mode", choices=["add", "negate", "fewshot", "tta-ufm", "tta-entropy"])
    p.add_argument("--base", required=True)
    p.add_argument("--tv", nargs="*", default=[])
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--control", default=None)
    p.add_argument("--split", choices=["train", "val", "test"], default=None,
                   help="training split (default: val for add/negate, test for tta)")
    _add_train_flags(p)
    p.add_argument("--l1", type=float, default=0.0)
    p.add_argument("--K", type=int, default=1)
    p.add_argument("--linearized", action="store_true")
    p.add_argument("--k", type=int, default=16, help="shots per class (fewshot)")
    p.add_argument("--target-id", default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--strategy", choices=["random", "features", "gradient-whole", "gradient-blockwise"])
    p.add_argument("--candidate-data", nargs="*", default=None, help="data of each tv's task (feature selection)")
    p.add_argument("--out", required=True, help="coefficients JSON")
    p.add_argument("--weights-out", default=None)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("eval", help="evaluate weights or coefficients")
    p.add_argument("what", choices=["acc", "relacc", "negation", "disentangle", "intrinsic"])
    p.add_argument("--base", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--coeffs", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--method", default=None)
    p.add_argument("--tv", nargs="*", default=[])
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--control", default=None)
    p.add_argument("--reference", nargs="*", default=None)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--basis", choices=["random", "taskvector"], default="taskvector")
    p.add_argument("--bases", type=int, nargs="+", default=[0, 1, 2, 4])
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="rerun a command from its manifest and compare outputs")
    p.add_argument("manifest_file")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    run = Run(args, argv)
    try:
        code = args.func(args, run)
        if args.command != "replay":
            run.manifest(args.manifest)
        return code or EXIT_OK
    except (LeakageError, ProtocolError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TvkitError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
