"""Command-line front end: one subcommand per pipeline stage, plus ``pipeline``.

Every subcommand reads and writes the on-disk formats (svol1 volumes, JSON
lines, CSV) so stages can be run, inspected and re-run independently.  A JSON
manifest (``--manifest``) may supply any flag; flags given on the command line
win.  Failures print ``{"error": kind, "message": ...}`` on stderr and exit
nonzero.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from pathlib import Path

from . import candidates as cg
from . import pruning as pr
from .errors import FormatError, ParameterError, SynaptikError
from .evaluation import (
    map_segments,
    match_predictions,
    pr_sweep,
    read_gt_jsonl,
    write_gt_jsonl,
)
from .parallel import ENV_VAR, set_threads
from .synth import PhantomConfig, generate_phantom, oracle_predict
from .target import TargetParams, make_target
from .volume import as_proximity, as_segmentation, read_svol, write_svol

EXIT_USAGE = 2
EXIT_FAILURE = 1

DEFAULT_THETAS = "0:1:0.01"

# names of the files a synth/pipeline run leaves in its output directory
IMAGE, GT_SEG, ANNOTATION, TARGET, GT_FILE = "image", "gt_seg", "annotation", "target", "gt.jsonl"


class UsageError(SynaptikError):
    kind = "usage"


class HelpFormatter(argparse.HelpFormatter):
    """Show the default of every option, including ones without help text."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "%(default)" in text or action.default is argparse.SUPPRESS or not action.option_strings:
            return text
        if isinstance(action, argparse._HelpAction):
            return text
        return f"{text} (default: %(default)s)".lstrip()

    def _format_action(self, action):
        if not action.help and action.option_strings and action.default is not argparse.SUPPRESS:
            action = copy.copy(action)
            action.help = "(default: %(default)s)"
        return super()._format_action(action)


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _triple(kind):
    def parse(text):
        parts = text.replace("x", ",").split(",")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
        try:
            return tuple(kind(p) for p in parts)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def parse_thetas(text) -> list[float]:
    """``"0:1:0.01"`` (start:stop:step, inclusive) or ``"0.1,0.5,0.9"``."""
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    if ":" in text:
        try:
            lo, hi, step = (float(v) for v in text.split(":"))
        except ValueError as exc:
            raise ParameterError(f"bad theta range {text!r}") from exc
        if step <= 0 or hi < lo:
            raise ParameterError(f"bad theta range {text!r}")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        # round away the accumulation error so the CSV shows 0.07, not 0.07000000000000001
        return [round(lo + i * step, 12) for i in range(n)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ParameterError(f"bad theta list {text!r}") from exc


# -- argument groups -----------------------------------------------------------


def _common(p):
    p.add_argument("--manifest", help="JSON file supplying defaults for any flag")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (falls back to ${ENV_VAR}, then 1)")


def _target_flags(p):
    g = p.add_argument_group("target")
    g.add_argument("--alpha", type=float, default=5.0, help="sigmoid steepness per nm")
    g.add_argument("--sigma-nm", type=float, default=10.0, help="Gaussian width in nm")
    g.add_argument("--cutoff-nm", type=float, default=None, help="zero beyond this distance; unset means 4 * sigma")


def _phantom_flags(p):
    d = PhantomConfig()
    g = p.add_argument_group("phantom")
    g.add_argument("--dims-zyx", type=_triple(int), default=d.dims_zyx, help="volume size Z,Y,X")
    g.add_argument("--voxel-size-xyz", type=_triple(float), default=d.voxel_size_nm_xyz, help="voxel size in nm, x,y,z")
    g.add_argument("--n-cells", type=int, default=d.n_cells)
    g.add_argument("--n-synapses", type=int, default=d.n_synapses)
    g.add_argument("--band-thickness-nm", type=float, default=d.band_thickness_nm)
    g.add_argument("--gray-noise-std", type=float, default=d.gray_noise_std, help="image noise")
    g.add_argument("--seed", type=int, default=d.seed)


def _oracle_flags(p, seed=True):
    g = p.add_argument_group("oracle prediction")
    g.add_argument("--noise-std", type=float, default=0.0, help="i.i.d. Gaussian noise added to the target")
    g.add_argument("--n-distractors", type=int, default=0, help="spurious signed blobs away from synapses")
    if seed:
        g.add_argument("--seed", type=int, default=0)


def _candidate_flags(p):
    d = cg.CandidateParams()
    g = p.add_argument_group("candidates")
    g.add_argument("--tau", type=float, default=d.tau, help="proximity threshold")
    g.add_argument("--omega", type=int, default=d.omega, help="minimum component/segment overlap in voxels")
    g.add_argument("--min-contact-area", type=int, default=d.min_contact_area, help="faces needed for two segments to touch")
    g.add_argument("--max-anchor-nm", type=float, default=d.max_anchor_nm, help="drop pairs farther apart than this")
    g.add_argument("--connectivity", type=int, choices=(6, 18, 26), default=d.connectivity, help="component connectivity")


def _window_flags(p):
    g = p.add_argument_group("features")
    g.add_argument("--window-zyx", type=_triple(int), default=pr.WindowSpec().size_zyx, help="feature window Z,Y,X")


def _train_flags(p):
    d = pr.TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--learning-rate", type=float, default=d.learning_rate)
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--l2", type=float, default=d.l2)
    g.add_argument("--label-rule", choices=pr.LABEL_RULES, default="each", help="how a candidate must overlap a span to be positive")


def _eval_flags(p):
    g = p.add_argument_group("evaluation")
    g.add_argument("--min-overlap", type=int, default=1, help="voxels shared with a span to count as a hit")


def build_parser() -> Parser:
    fmt = HelpFormatter
    top = Parser(prog="synaptik", description="Synapse partner detection pipeline.", formatter_class=fmt)
    sub = top.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    def add(name, help):
        p = sub.add_parser(name, help=help, description=help, formatter_class=fmt)
        _common(p)
        return p

    p = add("synth", "generate a phantom bundle")
    p.add_argument("--out", help="output directory")
    _phantom_flags(p)
    _target_flags(p)

    p = add("target", "signed proximity target from an annotation volume")
    p.add_argument("--annotation", help="annotation volume (svol1)")
    p.add_argument("--out", help="output volume stem")
    _target_flags(p)

    p = add("predict-oracle", "noisy stand-in prediction from a target volume")
    p.add_argument("--target", help="target volume")
    p.add_argument("--out", help="output volume stem")
    _oracle_flags(p)

    p = add("candidates", "pre/post partner candidates from a proximity map and a segmentation")
    p.add_argument("--proximity", help="proximity volume")
    p.add_argument("--segmentation", help="segmentation volume")
    p.add_argument("--out", help="output directory")
    _candidate_flags(p)

    p = add("features", "window features per candidate (labelled when ground truth is given)")
    p.add_argument("--candidates", help="candidates.jsonl (component volumes alongside)")
    p.add_argument("--image", help="gray image volume")
    p.add_argument("--proximity", help="proximity volume")
    p.add_argument("--segmentation", help="segmentation volume")
    p.add_argument("--gt", help="ground-truth connections (JSON lines)")
    p.add_argument("--gt-seg", help="ground-truth cell volume")
    p.add_argument("--annotation", help="annotation volume holding the spans")
    p.add_argument("--out", help="output CSV")
    p.add_argument("--label-rule", choices=pr.LABEL_RULES, default="each", help="how a candidate must overlap a span to be positive")
    _window_flags(p)

    p = add("train-scorer", "fit the logistic scorer on labelled features")
    p.add_argument("--features", help="labelled feature CSV")
    p.add_argument("--out", help="output scorer JSON")
    p.add_argument("--learning-rate", type=float, default=pr.TrainConfig().learning_rate)
    p.add_argument("--epochs", type=int, default=pr.TrainConfig().epochs)
    p.add_argument("--l2", type=float, default=pr.TrainConfig().l2)
    p.add_argument("--seed", type=int, default=0)

    p = add("score", "attach scores to candidates")
    p.add_argument("--candidates", help="candidates.jsonl")
    p.add_argument("--features", help="feature CSV (with --scorer)")
    p.add_argument("--scorer", help="scorer JSON")
    p.add_argument("--external-scores", help='JSON lines {"candidate": id, "score": s}')
    p.add_argument("--out", help="output scores (JSON lines)")

    p = add("prune", "keep candidates scoring at least theta")
    p.add_argument("--candidates", help="candidates.jsonl")
    p.add_argument("--scores", help="scores (JSON lines)")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--out", help="output predictions (JSON lines)")

    p = add("eval", "match predictions against ground truth")
    p.add_argument("--predictions", help="predictions (JSON lines)")
    p.add_argument("--components", help="directory with the component volumes (default: next to --predictions)")
    p.add_argument("--segmentation", help="segmentation volume")
    p.add_argument("--gt-seg", help="ground-truth cell volume")
    p.add_argument("--gt", help="ground-truth connections (JSON lines)")
    p.add_argument("--annotation", help="annotation volume holding the spans")
    p.add_argument("--out", help="output report JSON")
    _eval_flags(p)

    p = add("pr-curve", "precision/recall over a theta sweep")
    p.add_argument("--candidates", help="candidates.jsonl")
    p.add_argument("--scores", help="scores (JSON lines)")
    p.add_argument("--segmentation", help="segmentation volume")
    p.add_argument("--gt-seg", help="ground-truth cell volume")
    p.add_argument("--gt", help="ground-truth connections (JSON lines)")
    p.add_argument("--annotation", help="annotation volume holding the spans")
    p.add_argument("--thetas", default=DEFAULT_THETAS, help="start:stop:step or comma list, strictly increasing")
    p.add_argument("--out", help="output CSV (an SVG is written next to it)")
    _eval_flags(p)

    p = add("pipeline", "phantom -> candidates -> trained scorer -> evaluation, end to end")
    p.add_argument("--out", help="output directory")
    _phantom_flags(p)
    _target_flags(p)
    _oracle_flags(p, seed=False)
    _candidate_flags(p)
    _window_flags(p)
    _train_flags(p)
    _eval_flags(p)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--thetas", default=DEFAULT_THETAS, help="sweep for the PR curve")
    return top


# -- helpers -------------------------------------------------------------------


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{args.command}: missing required {flags}")


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _target_params(args) -> TargetParams:
    return TargetParams(alpha=args.alpha, sigma=args.sigma_nm, cutoff_nm=args.cutoff_nm)


def _candidate_params(args) -> cg.CandidateParams:
    return cg.CandidateParams(
        tau=args.tau,
        omega=args.omega,
        min_contact_area=args.min_contact_area,
        max_anchor_nm=args.max_anchor_nm,
        connectivity=args.connectivity,
    )


def _train_config(args) -> pr.TrainConfig:
    return pr.TrainConfig(learning_rate=args.learning_rate, epochs=args.epochs, l2=args.l2, seed=args.seed)


def _phantom_config(args, seed=None) -> PhantomConfig:
    return PhantomConfig(
        dims_zyx=args.dims_zyx,
        voxel_size_nm_xyz=args.voxel_size_xyz,
        n_cells=args.n_cells,
        n_synapses=args.n_synapses,
        band_thickness_nm=args.band_thickness_nm,
        gray_noise_std=args.gray_noise_std,
        seed=args.seed if seed is None else seed,
    )


def _ground_truth(args):
    """(gt connections, gt cell volume) from --gt, --gt-seg and --annotation."""
    _need(args, "gt", "gt_seg", "annotation")
    ann = read_svol(args.annotation)
    return read_gt_jsonl(args.gt, ann.data), as_segmentation(read_svol(args.gt_seg))


def write_bundle(out: Path, bundle) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_svol(out / IMAGE, bundle.image)
    write_svol(out / GT_SEG, bundle.gt_seg)
    write_svol(out / ANNOTATION, bundle.annotation)
    write_svol(out / TARGET, bundle.target)
    write_gt_jsonl(out / GT_FILE, bundle.connections)
    _dump_json(out / "phantom.json", bundle.config.to_dict())


def write_pr(out_csv: Path, curve) -> None:
    out_csv.write_text(curve.to_csv())
    out_csv.with_suffix(".svg").write_text(curve.to_svg())


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args):
    _need(args, "out")
    write_bundle(Path(args.out), generate_phantom(_phantom_config(args), _target_params(args)))


def cmd_target(args):
    _need(args, "annotation", "out")
    write_svol(args.out, make_target(read_svol(args.annotation), _target_params(args)))


def cmd_predict_oracle(args):
    _need(args, "target", "out")
    target = as_proximity(read_svol(args.target))
    write_svol(args.out, oracle_predict(target, args.noise_std, args.n_distractors, seed=args.seed))


def cmd_candidates(args):
    _need(args, "proximity", "segmentation", "out")
    prox = as_proximity(read_svol(args.proximity))
    seg = as_segmentation(read_svol(args.segmentation))
    cg.write_candidate_set(args.out, cg.generate_candidates(prox, seg, _candidate_params(args)))


def cmd_features(args):
    _need(args, "candidates", "image", "proximity", "segmentation", "out")
    seg = as_segmentation(read_svol(args.segmentation))
    cset = cg.load_candidate_set(args.candidates, seg)
    image, prox = read_svol(args.image), as_proximity(read_svol(args.proximity))
    X = pr.extract_features_batch(cset.candidates, image, prox, seg, pr.WindowSpec(args.window_zyx))
    labels = None
    if any(getattr(args, n) is not None for n in ("gt", "gt_seg", "annotation")):
        gt, G = _ground_truth(args)
        labels = pr.label_candidates(cset.candidates, seg, G, gt, rule=args.label_rule)
    pr.write_features_csv(args.out, cset.candidates, X, labels)


def cmd_train_scorer(args):
    _need(args, "features", "out")
    _, X, y = pr.read_features_csv(args.features)
    if y is None:
        raise FormatError(f"{args.features}: no label column to train on")
    cfg = pr.TrainConfig(learning_rate=args.learning_rate, epochs=args.epochs, l2=args.l2, seed=args.seed)
    pr.write_scorer(args.out, pr.train_scorer(X, y, cfg, trained_on=Path(args.features).name))


def _candidate_records(path):
    """Lightweight candidates (no component voxels) for scoring and pruning."""
    recs = cg.read_candidates_jsonl(path)
    return [_Rec(r) for r in recs]


class _Rec:
    __slots__ = ("id", "score", "rec")

    def __init__(self, rec, score=None):
        self.id, self.rec = rec["id"], rec
        self.score = rec["score"] if score is None else score

    def with_score(self, s):
        return _Rec(self.rec, s)

    def to_json(self):
        out = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.rec.items()}
        out["score"] = self.score
        return out


def cmd_score(args):
    _need(args, "candidates", "out")
    cands = _candidate_records(args.candidates)
    if (args.scorer is None) == (args.external_scores is None):
        raise UsageError("score: give exactly one of --scorer or --external-scores")
    if args.scorer is not None:
        _need(args, "features")
        ids, X, _ = pr.read_features_csv(args.features)
        if ids != [c.id for c in cands]:
            raise FormatError(f"{args.features}: feature rows do not line up with {args.candidates}")
        scored = pr.score_candidates(cands, pr.read_scorer(args.scorer), X)
    else:
        scored = pr.score_candidates(cands, external=pr.read_scores_jsonl(args.external_scores))
    pr.write_scores_jsonl(args.out, scored)


def _scored_records(args):
    scores = pr.read_scores_jsonl(args.scores)
    return pr.score_candidates(_candidate_records(args.candidates), external=scores)


def cmd_prune(args):
    _need(args, "candidates", "scores", "out")
    kept = pr.prune(_scored_records(args), args.theta)
    cg.write_candidates_jsonl(args.out, kept)


def _eval_inputs(args, cand_path, components_dir=None):
    seg = as_segmentation(read_svol(args.segmentation))
    gt, G = _ground_truth(args)
    cset = cg.load_candidate_set(cand_path, seg, components_dir)
    return cset, gt, map_segments(seg, G)


def cmd_eval(args):
    _need(args, "predictions", "segmentation", "out")
    cset, gt, seg_map = _eval_inputs(args, args.predictions, args.components)
    for c in cset.candidates:
        if c.score is None:
            raise FormatError(f"{args.predictions}: candidate {c.id} has no score")
    _dump_json(args.out, match_predictions(cset.candidates, gt, seg_map, args.min_overlap).to_json())


def cmd_pr_curve(args):
    _need(args, "candidates", "scores", "segmentation", "out")
    cset, gt, seg_map = _eval_inputs(args, args.candidates)
    scored = pr.score_candidates(cset.candidates, external=pr.read_scores_jsonl(args.scores))
    write_pr(Path(args.out), pr_sweep(scored, gt, seg_map, parse_thetas(args.thetas), args.min_overlap))


def _stage(args, cfg, out: Path | None):
    """Phantom, oracle prediction, candidates and features for one seed."""
    bundle = generate_phantom(cfg, _target_params(args))
    prox = oracle_predict(bundle.target, args.noise_std, args.n_distractors, seed=cfg.seed)
    cset = cg.generate_candidates(prox, bundle.gt_seg, _candidate_params(args))
    X = pr.extract_features_batch(cset.candidates, bundle.image, prox, bundle.gt_seg, pr.WindowSpec(args.window_zyx))
    if out is not None:
        write_bundle(out, bundle)
        write_svol(out / "proximity", prox)
        cg.write_candidate_set(out, cset)
    return bundle, cset, X


def cmd_pipeline(args):
    _need(args, "out")
    out = Path(args.out)
    train_dir, test_dir = out / "train", out / "test"
    # the scorer is fitted on an independent phantom (next seed) and judged on this one
    tb, tset, tX = _stage(args, _phantom_config(args, seed=args.seed + 1), train_dir)
    ty = pr.label_candidates(tset.candidates, tb.gt_seg, tb.gt_seg, tb.connections, args.min_overlap, args.label_rule)
    pr.write_features_csv(train_dir / "features.csv", tset.candidates, tX, ty)
    scorer = pr.train_scorer(tX, ty, _train_config(args), trained_on="train/features.csv")
    pr.write_scorer(out / "scorer.json", scorer)

    bundle, cset, X = _stage(args, _phantom_config(args), test_dir)
    pr.write_features_csv(test_dir / "features.csv", cset.candidates, X)
    scored = pr.score_candidates(cset.candidates, scorer, X)
    pr.write_scores_jsonl(test_dir / "scores.jsonl", scored)
    kept = pr.prune(scored, args.theta)
    cg.write_candidates_jsonl(test_dir / "predictions.jsonl", kept)
    seg_map = map_segments(bundle.gt_seg, bundle.gt_seg)
    report = match_predictions(kept, bundle.connections, seg_map, args.min_overlap)
    _dump_json(out / "eval.json", report.to_json())
    write_pr(out / "pr.csv", pr_sweep(scored, bundle.connections, seg_map, parse_thetas(args.thetas), args.min_overlap))


COMMANDS = {
    "synth": cmd_synth,
    "target": cmd_target,
    "predict-oracle": cmd_predict_oracle,
    "candidates": cmd_candidates,
    "features": cmd_features,
    "train-scorer": cmd_train_scorer,
    "score": cmd_score,
    "prune": cmd_prune,
    "eval": cmd_eval,
    "pr-curve": cmd_pr_curve,
    "pipeline": cmd_pipeline,
}


# -- entry point ---------------------------------------------------------------


def _manifest_values(path) -> dict:
    """Flatten a manifest into ``dest -> value``.

    Top-level keys and the contents of optional ``paths`` / ``params`` blocks
    are accepted; dashes and underscores are interchangeable.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"manifest {path}: expected a JSON object")
    flat = {}
    for k, v in raw.items():
        if k in ("paths", "params") and isinstance(v, dict):
            flat.update(v)
        else:
            flat[k] = v
    out = {}
    for k, v in flat.items():
        if isinstance(v, list) and len(v) == 3 and k.replace("-", "_") in ("dims_zyx", "voxel_size_xyz", "window_zyx"):
            v = tuple(v)
        out[k.replace("-", "_")] = v
    return out


def _apply_manifest(parser: Parser, argv: list[str], args) -> argparse.Namespace:
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    values = _manifest_values(args.manifest)
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"manifest {args.manifest}: unknown keys for {args.command}: {', '.join(unknown)}")
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.manifest:
            args = _apply_manifest(parser, argv, args)
        set_threads(args.threads)
        COMMANDS[args.command](args)
    except UsageError as exc:
        _report(exc)
        return EXIT_USAGE
    except SynaptikError as exc:
        _report(exc)
        return EXIT_FAILURE
    except (OSError, ValueError) as exc:
        _report(exc, "io" if isinstance(exc, OSError) else "parameter")
        return EXIT_FAILURE
    return 0


def _report(exc, kind=None) -> None:
    kind = kind or getattr(exc, "kind", "error")
    if isinstance(exc, OSError) and exc.filename:
        message = f"{exc.filename}: {exc.strerror}"
    else:
        message = str(exc)
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


if __name__ == "__main__":
    raise SystemExit(main())
