"""Command-line entry point.

Exit status: 0 success, 1 invalid input or usage, 2 numerical failure.
Errors are written to stderr as one line: ``error: <kind>: <message>``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import baselines, ellips, experiments, genellips, localization, mixture
from .formats import FORMAT_VERSION, CurveTable, ValidationError, dump_json, fmt_cell, parse_float, parse_grid

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _grid(text: str) -> np.ndarray:
    try:
        return parse_grid(text)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _float_list(text: str) -> list:
    try:
        return [parse_float(t) for t in text.split(",")]
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _int_list(text: str) -> list:
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _emit(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _emit_json(obj: dict, path) -> None:
    _emit(dump_json({"format_version": FORMAT_VERSION, **obj}), path)


def _emit_curve(tab: CurveTable, args, title: str) -> None:
    _emit(tab.to_csv(), args.output)
    if getattr(args, "svg", None):
        Path(args.svg).write_text(tab.to_svg(title=title))


def _csv(header: list, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(fmt_cell(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def _check_paths(args) -> None:
    for name in ("model", "data"):
        p = getattr(args, name, None)
        if p is not None and not Path(p).is_file():
            raise ValidationError(f"{name} file not found: {p}")
    for name in ("output", "svg", "model_out", "curve", "latent_curve", "degradation_out"):
        p = getattr(args, name, None)
        if p is not None:
            parent = Path(p).resolve().parent
            if not parent.is_dir():
                raise ValidationError(f"output directory does not exist: {parent}")


def _check_dim(model, data):
    if data.dimension != model.dimension:
        raise ValidationError(f"dimension mismatch: expected d={model.dimension}, found d={data.dimension}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args):
    data = mixture.load_dataset(args.data)
    model = mixture.fit(data, args.reg)
    _emit(dump_json(mixture.model_to_dict(model)), args.output)


def cmd_classify(args):
    model = mixture.load(args.model)
    data = mixture.load_dataset(args.data)
    _check_dim(model, data)
    S = ellips.scores(model, data.X)
    top, _, margin = ellips.rank_scores(S)
    names = model.class_labels
    header = ["label", "predicted", "margin"] + [f"score_{c}" for c in names]
    rows = ([lab, names[t], m] + list(s) for lab, t, m, s in zip(data.labels, top, margin, S))
    _emit(_csv(header, rows), args.output)


def cmd_certify(args):
    model = mixture.load(args.model)
    data = mixture.load_dataset(args.data)
    _check_dim(model, data)
    cert = ellips.certify_batch(model, data.X)
    names = model.class_labels
    rows = zip(data.labels, (names[p] for p in cert.predicted), cert.margin, cert.radius, cert.cases)
    _emit(_csv(["label", "predicted", "margin", "radius", "case"], rows), args.output)
    if args.eps is not None:
        if args.curve is None:
            raise ValidationError("--eps needs --curve PATH for the certified-accuracy table")
        tab = ellips.certified_accuracy_curve(model, data, args.eps)
        Path(args.curve).write_text(tab.to_csv())
        if args.svg:
            Path(args.svg).write_text(tab.to_svg(title="certified accuracy"))


def cmd_localize(args):
    model = mixture.load(args.model)
    if args.r is not None:
        q = localization.LocalizationQuery(tuple(args.r), args.epsilon, args.C)
    else:
        q = localization.LocalizationQuery.for_delta(model, args.delta, args.epsilon, args.C)
    rep = localization.localize(model, q, args.legacy_formula)
    _emit_json(rep.to_dict(model, q), args.output)


def cmd_pal_curve(args):
    model = mixture.load(args.model)
    tab = localization.pal_certified_accuracy(model, args.eps, args.delta, args.legacy_formula)
    _emit_curve(tab, args, "localization baseline")


def _attack_cfg(args) -> baselines.AttackConfig:
    return baselines.AttackConfig(0.0, args.steps, args.step_size, args.restarts, args.seed)


def cmd_pgd(args):
    model = mixture.load(args.model)
    data = mixture.load_dataset(args.data)
    _check_dim(model, data)
    _emit_curve(baselines.empirical_robust_curve(model, data, args.eps, _attack_cfg(args)), args, "PGD")


def cmd_smooth(args):
    model = mixture.load(args.model)
    data = mixture.load_dataset(args.data)
    _check_dim(model, data)
    cfg = baselines.SmoothingConfig(args.sigma, args.n0, args.n, args.alpha)
    _emit_curve(baselines.smoothed_curve(model, data, args.eps, cfg, args.seed), args, "smoothing")


def cmd_gen_certify(args):
    res = genellips.latent_pipeline(args.data, args.eps, args.seed, k=args.k, reg=args.reg,
                                    n_gmm=args.n_gmm, legacy_formula=args.legacy_formula)
    _emit_json(res.report(), args.output)
    if args.curve:
        Path(args.curve).write_text(res.input_curve.to_csv())
    if args.latent_curve:
        Path(args.latent_curve).write_text(res.latent_curve.to_csv())
    if args.degradation_out:
        Path(args.degradation_out).write_text(res.degradation.to_csv())
    if args.svg:
        Path(args.svg).write_text(res.input_curve.to_svg(title="input-space certified accuracy"))
    rep = res.report()
    print(f"kl_estimate={rep['kl_epsilon']:.6g} stderr={rep['kl_stderr']:.3g}; "
          f"lower bound at eps={rep['epsilon'][0]:.6g}: {rep['lower_bound'][0]:.6g} "
          f"(conditional on KL <= estimate)", file=sys.stderr)


def cmd_kl_est(args):
    model = mixture.load(args.model)
    data = mixture.load_dataset(args.data)
    _check_dim(model, data)
    est = genellips.kl_knn_estimate(data.X, model, args.k)
    out = {"kl_estimate": est.estimate, "kl_raw": est.raw, "stderr": est.stderr, "k": est.k, "n": est.n}
    if args.cert_acc is not None:
        rep = genellips.degraded_certified_accuracy(args.cert_acc, est.estimate)
        out["cert_acc_gmm"] = rep.cert_acc_gmm
        out["lower_bound"] = rep.cert_acc_lower_bound
        out["lower_bound_raw"] = rep.cert_acc_lower_bound_raw
    _emit_json(out, args.output)


def cmd_mardia(args):
    rep = genellips.mardia_test(mixture.load_dataset(args.data))
    _emit_json({"level": 0.05, "pass_rate": rep.pass_rate, "classes": rep.to_dict()}, args.output)


def cmd_synth(args):
    cfg = experiments.SyntheticConfig(args.K, args.R, args.d, args.cov, args.n, 1, args.seed)
    syn = experiments.make_synthetic(cfg)
    data = syn.train
    if args.encoder == "random":
        A = genellips.random_linear_encoder(args.d, args.seed)
        data = mixture.LabeledDataset(data.X @ A.T, data.labels, np.full(len(data), np.linalg.norm(A, 2)))
    _emit(mixture.dataset_to_csv(data), args.output)
    if args.model_out:
        mixture.save(syn.model, args.model_out)


def cmd_compare(args):
    cfg = experiments.SyntheticConfig(args.K, args.R, args.d, args.cov, args.n_train, args.n_eval, args.seed)
    comp = experiments.ComparisonConfig(
        delta=args.delta,
        attack=baselines.AttackConfig(0.0, args.steps, None, args.restarts, args.seed),
        sigmas=tuple(args.sigmas),
        smoothing=baselines.SmoothingConfig(args.sigmas[0], args.n0, args.n_smooth, args.alpha),
        run_smoothing=not args.no_smoothing)
    _emit_curve(experiments.comparison_study(cfg, args.eps, comp), args, f"K={args.K} R={args.R} {args.cov}")


def cmd_scaling(args):
    cfg = experiments.ScalingStudyConfig(tuple(args.n), tuple(args.d), args.trials, args.seed,
                                         workers=args.threads)
    _emit_json(experiments.scaling_study(cfg).to_dict(), args.output)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="maximum worker threads (default: available CPUs); results do not depend on it")

    p = _Parser(prog="ellipscert", description="Certified l2 robustness for Gaussian-mixture classifiers.")
    p.add_argument("--version", action="version",
                   version=f"ellipscert {__version__} (format_version {FORMAT_VERSION})")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        sp.set_defaults(func=func)
        return sp

    def out(sp, what="output file (default: stdout)"):
        sp.add_argument("-o", "--output", default=None, help=what)

    def svg(sp):
        sp.add_argument("--svg", default=None, help="also write an SVG line plot to this path")

    def seed(sp):
        sp.add_argument("--seed", type=int, required=True, help="random seed (integer, required)")

    def grid(sp, required=True):
        sp.add_argument("--eps", type=_grid, required=required,
                        help="l2 radius grid in input units, start:stop:count (inclusive) or a,b,c")

    def attack(sp):
        sp.add_argument("--steps", type=int, default=100, help="PGD iterations per restart (count)")
        sp.add_argument("--restarts", type=int, default=20, help="PGD random restarts (count)")
        sp.add_argument("--step-size", type=float, default=None,
                        help="PGD l2 step length in input units (default 2.5*eps/steps)")

    sp = add("fit", cmd_fit, "Fit class means and covariances (MLE) to a labeled CSV.")
    sp.add_argument("data", help="dataset CSV: label,z_0,...,z_{d-1}")
    sp.add_argument("--reg", type=float, default=None,
                    help="minimum covariance eigenvalue, squared input units (default 1e-6 * mean variance)")
    out(sp, "model JSON path (default: stdout)")

    sp = add("classify", cmd_classify, "Predict labels and report scores and margins.")
    sp.add_argument("model", help="model JSON")
    sp.add_argument("data", help="dataset CSV")
    out(sp, "prediction CSV path (default: stdout)")

    sp = add("certify", cmd_certify, "Certified l2 radius per sample.")
    sp.add_argument("model", help="model JSON")
    sp.add_argument("data", help="dataset CSV")
    out(sp, "certificate CSV path: label,predicted,margin,radius,case (default: stdout)")
    grid(sp, required=False)
    sp.add_argument("--curve", default=None, help="certified-accuracy CSV path (used with --eps)")
    svg(sp)

    sp = add("localize", cmd_localize, "Per-class localization mass, volume exponent and overlap bound.")
    sp.add_argument("model", help="model JSON")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--delta", type=float, default=localization.DEFAULT_DELTA,
                   help="target mass outside each ellipsoid, probability (default 0.001)")
    g.add_argument("--r", type=_float_list, default=None,
                   help="comma-separated Mahalanobis radii, one per class (dimensionless)")
    sp.add_argument("--epsilon", type=float, default=0.0, help="l2 budget in input units (default 0)")
    sp.add_argument("--C", type=float, default=None,
                    help="volume constant, input units^d (default: unit-ball volume * e^d)")
    sp.add_argument("--legacy-formula", action="store_true",
                    help="overlap bound that ignores covariance differences (exact only for equal covariances)")
    out(sp, "report JSON path (default: stdout)")

    sp = add("pal-curve", cmd_pal_curve, "Localization-baseline certified accuracy 1 - delta - gamma.")
    sp.add_argument("model", help="model JSON")
    grid(sp)
    sp.add_argument("--delta", type=float, default=localization.DEFAULT_DELTA,
                    help="mass outside each ellipsoid, probability (default 0.001)")
    sp.add_argument("--legacy-formula", action="store_true",
                    help="overlap bound that ignores covariance differences (exact only for equal covariances)")
    out(sp, "curve CSV path (default: stdout)")
    svg(sp)

    sp = add("pgd", cmd_pgd, "Empirical robust accuracy under an l2 PGD attack.")
    sp.add_argument("model", help="model JSON")
    sp.add_argument("data", help="dataset CSV")
    grid(sp)
    attack(sp)
    seed(sp)
    out(sp, "curve CSV path (default: stdout)")
    svg(sp)

    sp = add("smooth", cmd_smooth, "Randomized-smoothing certified accuracy of the classifier.")
    sp.add_argument("model", help="model JSON")
    sp.add_argument("data", help="dataset CSV")
    grid(sp)
    sp.add_argument("--sigma", type=float, default=0.5, help="noise standard deviation, input units (default 0.5)")
    sp.add_argument("--n0", type=int, default=100, help="selection draws per point (count, default 100)")
    sp.add_argument("--n", type=int, default=10_000, help="estimation draws per point (count, default 10000)")
    sp.add_argument("--alpha", type=float, default=0.001, help="failure probability (default 0.001)")
    seed(sp)
    out(sp, "curve CSV path (default: stdout)")
    svg(sp)

    sp = add("gen-certify", cmd_gen_certify, "Certify latent embeddings in input space; KL and normality reports.")
    sp.add_argument("data", help="embedding CSV with a lipschitz column")
    grid(sp)
    seed(sp)
    sp.add_argument("--k", type=int, default=5, help="nearest neighbours for the KL estimate (count, default 5)")
    sp.add_argument("--reg", type=float, default=None, help="minimum covariance eigenvalue, squared latent units")
    sp.add_argument("--n-gmm", type=int, default=None,
                    help="draws from the fitted mixture for its certified accuracy (count, default max(n, 10000))")
    sp.add_argument("--legacy-formula", action="store_true",
                    help="use m / (L sqrt(c^2 + (-lam)_+ m) + c) instead of latent radius / L (comparison only)")
    sp.add_argument("--curve", default=None, help="input-space certified-accuracy CSV path")
    sp.add_argument("--latent-curve", default=None, help="latent-space certified-accuracy CSV path")
    sp.add_argument("--degradation-out", default=None, help="per-epsilon lower-bound CSV path")
    out(sp, "report JSON path (default: stdout)")
    svg(sp)

    sp = add("kl-est", cmd_kl_est, "k-NN estimate of KL(data || model).")
    sp.add_argument("model", help="model JSON")
    sp.add_argument("data", help="dataset CSV")
    sp.add_argument("--k", type=int, default=5, help="nearest neighbours (count, default 5)")
    sp.add_argument("--cert-acc", type=float, default=None,
                    help="certified accuracy under the model (probability); adds the degraded lower bound")
    out(sp, "report JSON path (default: stdout)")

    sp = add("mardia", cmd_mardia, "Mardia skewness and kurtosis normality test per class.")
    sp.add_argument("data", help="dataset CSV")
    out(sp, "report JSON path (default: stdout)")

    def synth_shape(sp):
        sp.add_argument("--K", type=int, default=3, help="number of classes (default 3)")
        sp.add_argument("--R", type=float, default=2.0, help="circle radius of the class means, input units (default 2)")
        sp.add_argument("--d", type=int, default=2, help="dimension (default 2)")
        sp.add_argument("--cov", choices=[experiments.ISOTROPIC, experiments.ANISOTROPIC],
                        default=experiments.ISOTROPIC, help="covariance kind (default isotropic)")

    sp = add("synth", cmd_synth, "Sample a labeled dataset from a circle mixture.")
    synth_shape(sp)
    sp.add_argument("--n", type=int, default=1000, help="number of samples (count, default 1000)")
    sp.add_argument("--encoder", choices=["none", "random"], default="none",
                    help="'random' embeds with a seeded linear map and adds its operator norm as lipschitz")
    seed(sp)
    sp.add_argument("--model-out", default=None, help="write the generating model JSON here")
    out(sp, "dataset CSV path (default: stdout)")

    sp = add("compare", cmd_compare, "Certified and empirical accuracy curves of all methods.")
    synth_shape(sp)
    sp.add_argument("--n-train", type=int, default=5000, help="training samples (count, default 5000)")
    sp.add_argument("--n-eval", type=int, default=500, help="evaluation samples (count, default 500)")
    grid(sp)
    sp.add_argument("--delta", type=float, default=localization.DEFAULT_DELTA,
                    help="localization-baseline mass outside each ellipsoid (default 0.001)")
    attack(sp)
    sp.add_argument("--sigmas", type=_float_list, default=[0.25, 0.5, 1.0],
                    help="smoothing noise levels, input units; the column is their envelope (default 0.25,0.5,1)")
    sp.add_argument("--n0", type=int, default=100, help="smoothing selection draws (count)")
    sp.add_argument("--n-smooth", type=int, default=10_000, help="smoothing estimation draws (count)")
    sp.add_argument("--alpha", type=float, default=0.001, help="smoothing failure probability")
    sp.add_argument("--no-smoothing", action="store_true", help="skip the smoothing column (written as nan)")
    seed(sp)
    out(sp, "comparison CSV path (default: stdout)")
    svg(sp)

    sp = add("scaling", cmd_scaling, "Regress log radius error on log n and log d.")
    sp.add_argument("--n", type=_int_list, default=[10, 100, 500, 1000],
                    help="samples per class, comma-separated (default 10,100,500,1000)")
    sp.add_argument("--d", type=_int_list, default=[2, 10, 100], help="dimensions, comma-separated (default 2,10,100)")
    sp.add_argument("--trials", type=int, default=10, help="trials per (n, d) cell (default 10)")
    seed(sp)
    out(sp, "report JSON path (default: stdout)")
    return p


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads is not None and args.threads < 1:
            raise ValidationError(f"--threads must be >= 1, got {args.threads}")
        _check_paths(args)
        args.func(args)
    except SystemExit as exc:          # --help and --version
        return int(exc.code or 0)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_INVALID)
    except (ValueError, OSError) as exc:
        return _fail("validation", exc, EXIT_INVALID)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
