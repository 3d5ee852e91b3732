"""Batch command-line front end.

Subcommands: ``detect`` (rank outliers by anomaly score), ``explain``
(attribution scores + litmus plot), ``dist`` (per-variable score
distributions), ``compare`` (consistency metrics between methods), and
``oracle`` (closed-form values on the builtin sinusoidal model).

Exit codes: 0 success, 2 usage/configuration error, 3 model transport error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import baselines, dataio, gpa, metrics, oracle
from .dataio import RunConfig, TestSet
from .gpa import DivergenceError, GpaHyperParams
from .models import (
    BuiltinModelSpec,
    GradientEstimatorConfig,
    HttpModel,
    ModelHandle,
    SubprocessModel,
    TransportError,
    make_builtin,
)

MODEL_ENV_VAR = "ANOMATTR_MODEL"
ALL_METHODS = ("gpa", "lc", "lime", "lime0", "baylime", "ig", "eig", "sv", "zscore")
_COLLECTIVE_METHODS = ("gpa",)


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def resolve_model(spec: str | None, dimension: int | None = None) -> ModelHandle:
    """Build a model handle from its CLI description.

    Accepted forms: ``sinusoidal2d``, ``linear:c1,c2,...``,
    ``quadratic:c1,...``, ``subprocess:<command>``, ``http://...`` /
    ``https://...``.  Falls back to the ``ANOMATTR_MODEL`` environment
    variable when omitted.
    """
    if spec is None:
        spec = os.environ.get(MODEL_ENV_VAR)
    if not spec:
        raise UsageError(
            f"no model given: pass --model or set {MODEL_ENV_VAR}"
        )
    if spec.startswith(("http://", "https://")):
        if dimension is None:
            raise UsageError("an HTTP model needs a dataset to infer the dimension")
        return HttpModel(spec, dimension)
    if spec.startswith("subprocess:"):
        if dimension is None:
            raise UsageError("a subprocess model needs a dataset to infer the dimension")
        return SubprocessModel(spec[len("subprocess:"):], dimension)
    kind, _, coef_text = spec.partition(":")
    coefficients = _floats(coef_text) if coef_text else ()
    try:
        model = make_builtin(BuiltinModelSpec(kind, coefficients))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if dimension is not None and model.dimension != dimension:
        raise UsageError(
            f"model dimension {model.dimension} does not match dataset "
            f"dimension {dimension}"
        )
    return model


def _load_testset(args) -> TestSet:
    ts = dataio.load_csv(args.data)
    if getattr(args, "standardize", False):
        ts = dataio.standardize(ts)
    return ts


def _noise_variance(args, ts: TestSet, model: ModelHandle) -> float:
    if getattr(args, "noise_var", None) is not None:
        if args.noise_var <= 0:
            raise UsageError("--noise-var must be positive")
        return args.noise_var
    resid = ts.y - model.evaluate_batch(ts.x)
    sigma2 = float(np.mean(resid**2))
    return sigma2 if sigma2 > 0 else 1e-6


def _selected_indices(args, n_test: int) -> list[int]:
    if getattr(args, "indices", None):
        idx = _ints(args.indices)
    else:
        idx = [args.point_index]
    for i in idx:
        if not 0 <= i < n_test:
            raise UsageError(f"sample index {i} out of range (0..{n_test - 1})")
    if len(idx) > 1 and not getattr(args, "collective", False):
        raise UsageError(
            "multiple --indices require --collective; run single points "
            "with --point-index"
        )
    return idx


def _hyperparams(args, n_selected: int) -> GpaHyperParams:
    overrides = {}
    for flag, name in (
        ("eta", "eta"), ("nu", "nu"), ("kappa", "kappa"), ("a0", "a0"),
        ("cb", "c_b"), ("b0", "b0"), ("b_mode", "b_mode"),
        ("grid_points", "grid_points"), ("max_iter", "max_iter"), ("tol", "tol"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    try:
        return GpaHyperParams.for_testset(n_selected, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _grad_cfg(args) -> GradientEstimatorConfig:
    return GradientEstimatorConfig(
        perturbation_std=args.grad_std, mc_samples=args.grad_samples, seed=args.seed
    )


def _reference_set(args, dimension: int) -> baselines.ReferenceSet | None:
    if getattr(args, "ref", None) is None:
        return None
    ref_ts = dataio.load_csv(args.ref)
    if ref_ts.dimension != dimension:
        raise UsageError(
            f"reference dimension {ref_ts.dimension} does not match dataset "
            f"dimension {dimension}"
        )
    return baselines.ReferenceSet(ref_ts.x)


def _run_method(
    name: str,
    model: ModelHandle,
    selection: TestSet,
    args,
    hp: GpaHyperParams,
    grad_cfg: GradientEstimatorConfig,
    ref: baselines.ReferenceSet | None,
):
    """Compute one method's scores on the selected sample(s).

    Returns (scores, extras) where extras carries method diagnostics for the
    result document.
    """
    x_t, y_t = selection.x[0], float(selection.y[0])
    if name == "gpa":
        result = gpa.map_estimate(selection, model, hp, grad_cfg)
        return result.delta_star, {
            "iterations": result.iterations,
            "converged": result.converged,
            "query_count": result.query_count,
        }
    if name == "lc":
        scores = baselines.lc(
            model, x_t, y_t, eta=hp.eta, nu=hp.nu, lam=args.lc_lambda,
            kappa=args.lc_kappa, grad_cfg=grad_cfg,
            max_iter=hp.max_iter, tol=hp.tol,
        )
        return scores, None
    lime_cfg = baselines.LimeConfig(
        n_samples=args.lime_samples, sampling_std=args.lime_std,
        l1_strength=args.lime_l1, seed=args.seed,
    )
    if name == "lime":
        return baselines.lime(model, x_t, y_t, lime_cfg), None
    if name == "lime0":
        return baselines.lime0(model, x_t, lime_cfg), None
    if name == "baylime":
        result = baselines.baylime_distributions(
            model, x_t, y_t, lime_cfg, args.prior_eta, args.noise_lambda
        )
        return result.means, {"variance": result.variance}
    if name == "ig":
        if args.baseline is None:
            raise UsageError("method 'ig' requires --baseline")
        cfg = baselines.IgConfig(_floats(args.baseline), args.n_intervals)
        return baselines.integrated_gradient(model, x_t, cfg, grad_cfg), None
    if ref is None:
        raise UsageError(f"method {name!r} requires --ref")
    if name == "eig":
        cfg = baselines.IgConfig(None, args.n_intervals)
        return baselines.expected_integrated_gradient(model, x_t, ref, cfg, grad_cfg), None
    if name == "sv":
        return baselines.shapley_sampled(model, x_t, ref, args.sv_configs, args.seed), None
    if name == "zscore":
        return baselines.z_score(x_t, ref), None
    raise UsageError(f"unknown method {name!r}")


def _parse_methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    if not methods:
        raise UsageError("at least one method required")
    for m in methods:
        if m not in ALL_METHODS:
            raise UsageError(
                f"unknown method {m!r}; choose from {', '.join(ALL_METHODS)}"
            )
    return methods


def _run_config(args, methods: list[str], indices: list[int], hyper: dict) -> RunConfig:
    return RunConfig(
        model=args.model or os.environ.get(MODEL_ENV_VAR, ""),
        methods=methods,
        seed=args.seed,
        data=getattr(args, "data", "") or "",
        indices=indices,
        collective=getattr(args, "collective", False),
        hyperparams=hyper,
        output_dir=str(getattr(args, "out", "")),
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_detect(args) -> int:
    ts = _load_testset(args)
    if ts.n_test == 0:
        raise UsageError("dataset has no samples")
    model = resolve_model(args.model, ts.dimension)
    noise_var = _noise_variance(args, ts, model)
    scores = [
        metrics.anomaly_score(model, ts.x[t], ts.y[t], noise_var, t)
        for t in range(ts.n_test)
    ]
    order = sorted(range(ts.n_test), key=lambda t: (-scores[t].value, t))
    top = order[: args.top]
    for t in order:
        marker = "*" if t in top else " "
        print(f"{marker} sample {t:4d}  anomaly_score {scores[t].value:.6f}")
    print(f"top-{args.top} indices: {','.join(str(t) for t in top)}")
    if args.out:
        out = _out_dir(args)
        doc = {
            "noise_variance": noise_var,
            "scores": [s.value for s in scores],
            "order": order,
            "indices": top,
        }
        path = out / "detect.json"
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        print(f"wrote {path}")
    return 0


def cmd_explain(args) -> int:
    methods = _parse_methods(args.methods)
    ts = _load_testset(args)
    if ts.n_test == 0:
        raise UsageError("dataset has no samples")
    model = resolve_model(args.model, ts.dimension)
    indices = _selected_indices(args, ts.n_test)
    if args.collective:
        unsupported = [m for m in methods if m not in _COLLECTIVE_METHODS]
        if unsupported:
            raise UsageError(
                f"--collective supports only {', '.join(_COLLECTIVE_METHODS)}; "
                f"got {', '.join(unsupported)}"
            )
    selection = ts.select(indices)
    hp = _hyperparams(args, selection.n_test)
    grad_cfg = _grad_cfg(args)
    ref = _reference_set(args, ts.dimension)

    noise_var = _noise_variance(args, ts, model)
    anomaly = [
        {"sample_index": i,
         "value": metrics.anomaly_score(model, ts.x[i], ts.y[i], noise_var, i).value}
        for i in indices
    ]

    methods_doc = {}
    diagnostics = {}
    litmus_scores = {}
    for name in methods:
        scores, extras = _run_method(name, model, selection, args, hp, grad_cfg, ref)
        entry = {"scores": np.asarray(scores)}
        if ts.standardization is not None and name in ("gpa", "lc"):
            entry["scores_raw_units"] = dataio.delta_to_raw_units(scores, ts)
        methods_doc[name] = entry
        litmus_scores[name] = np.asarray(scores)
        if extras:
            diagnostics[name] = extras
    diagnostics["model_queries"] = model.query_count

    out = _out_dir(args)
    config = _run_config(
        args, methods, indices,
        {"eta": hp.eta, "nu": hp.nu, "kappa": hp.kappa, "a0": hp.a0,
         "c_b": hp.c_b, "noise_variance": noise_var},
    )
    result_path = out / "result.json"
    dataio.emit_result_json(
        {
            "config": config.to_dict(),
            "anomaly_scores": anomaly,
            "methods": methods_doc,
            "diagnostics": diagnostics,
        },
        result_path,
    )
    litmus_path = out / "litmus.svg"
    dataio.emit_litmus_svg(litmus_scores, litmus_path, ts.variable_names)
    print(f"wrote {result_path}")
    print(f"wrote {litmus_path}")
    return 0


def cmd_dist(args) -> int:
    ts = _load_testset(args)
    if ts.n_test == 0:
        raise UsageError("dataset has no samples")
    model = resolve_model(args.model, ts.dimension)
    indices = _selected_indices(args, ts.n_test)
    selection = ts.select(indices)
    hp = _hyperparams(args, selection.n_test)
    grad_cfg = _grad_cfg(args)

    result = gpa.map_estimate(selection, model, hp, grad_cfg)
    if not result.converged:
        print(
            f"warning: no convergence within {hp.max_iter} iterations; "
            "distributions use the last iterate",
            file=sys.stderr,
        )
    dists = gpa.score_distributions(result.delta_star, selection, model, hp)

    out = _out_dir(args)
    config = _run_config(
        args, ["gpa"], indices,
        {"eta": hp.eta, "nu": hp.nu, "kappa": hp.kappa, "a0": hp.a0,
         "c_b": hp.c_b, "grid_points": hp.grid_points},
    )
    doc = {
        "config": config.to_dict(),
        "methods": {
            "gpa": {
                "scores": result.delta_star,
                "distribution": {
                    "grid": dists[0].grid,
                    "probs": [d.probs for d in dists],
                    "delta_max": dists[0].delta_max,
                },
            }
        },
        "diagnostics": {
            "gpa": {
                "iterations": result.iterations,
                "converged": result.converged,
                "query_count": result.query_count,
            }
        },
    }
    json_path = out / "distributions.json"
    dataio.emit_result_json(doc, json_path)
    svg_path = out / "distributions.svg"
    dataio.emit_distribution_svg(dists, result.delta_star, svg_path, ts.variable_names)
    print(f"wrote {json_path}")
    print(f"wrote {svg_path}")
    return 0


def cmd_compare(args) -> int:
    methods = _parse_methods(args.methods)
    if args.reference not in methods:
        methods = [args.reference] + methods
    if len(methods) < 2:
        raise UsageError("compare needs at least two methods")
    ts = _load_testset(args)
    if ts.n_test == 0:
        raise UsageError("dataset has no samples")
    model = resolve_model(args.model, ts.dimension)
    indices = _selected_indices(args, ts.n_test)
    selection = ts.select(indices)
    hp = _hyperparams(args, selection.n_test)
    grad_cfg = _grad_cfg(args)
    ref = _reference_set(args, ts.dimension)

    scores = {}
    for name in methods:
        scores[name], _ = _run_method(name, model, selection, args, hp, grad_cfg, ref)

    reference_scores = scores[args.reference]
    reports = {}
    for name in methods:
        if name == args.reference:
            continue
        report = metrics.consistency_report(reference_scores, scores[name])
        reports[name] = {
            "kendall_tau": report.kendall_tau,
            "spearman_rho": report.spearman_rho,
            "smr": report.smr,
            "hit25": report.hit25,
            "notes": report.notes,
        }

    def _cell(v):
        return "   null" if v is None else f"{v:7.4f}"

    print(f"consistency vs {args.reference}:")
    print(f"{'method':<10} {'tau':>7} {'rho':>7} {'smr':>7} {'hit25':>7}")
    for name, rep in reports.items():
        print(
            f"{name:<10} {_cell(rep['kendall_tau'])} {_cell(rep['spearman_rho'])} "
            f"{_cell(rep['smr'])} {_cell(rep['hit25'])}"
        )

    if args.out:
        out = _out_dir(args)
        doc = {
            "config": _run_config(args, methods, indices, {}).to_dict(),
            "reference": args.reference,
            "scores": {k: np.asarray(v).tolist() for k, v in scores.items()},
            "reports": reports,
        }
        path = out / "compare.json"
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        print(f"wrote {path}")
    return 0


def cmd_oracle(args) -> int:
    x = np.asarray(_floats(args.x))
    if args.which == "lime0":
        scores = oracle.oracle_lime0(x)
    elif args.which == "gpa":
        if args.y is None:
            raise UsageError("oracle gpa requires --y")
        scores = oracle.oracle_gpa(x, args.y)
    elif args.which == "ig":
        if args.x0 is None:
            raise UsageError("oracle ig requires --x0")
        scores = oracle.oracle_ig(x, np.asarray(_floats(args.x0)))
    else:
        scores = oracle.oracle_sv(x)
    print(json.dumps({"method": args.which, "scores": scores.tolist()}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p, with_data=True):
    if with_data:
        p.add_argument("--data", required=True, help="dataset CSV (last column is the target)")
        p.add_argument("--standardize", action="store_true",
                       help="standardize x columns (test-set statistics)")
    p.add_argument("--model", default=None,
                   help="sinusoidal2d | linear:c1,c2 | quadratic:c1,.. | "
                        f"subprocess:CMD | http(s)://URL (default ${MODEL_ENV_VAR})")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grad-std", type=float, default=1.0,
                   help="gradient estimator perturbation std")
    p.add_argument("--grad-samples", type=int, default=10,
                   help="gradient estimator Monte Carlo samples")


def _add_selection(p):
    p.add_argument("--point-index", type=int, default=0)
    p.add_argument("--indices", default=None, help="comma-separated sample indices")
    p.add_argument("--collective", action="store_true",
                   help="one shared perturbation for all selected samples")


def _add_gpa_flags(p):
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--a0", type=float, default=None)
    p.add_argument("--cb", type=float, default=None)
    p.add_argument("--b0", type=float, default=None)
    p.add_argument("--b-mode", dest="b_mode", choices=("constant", "local_kernel"),
                   default=None)
    p.add_argument("--grid-points", type=int, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)


def _add_method_flags(p):
    p.add_argument("--baseline", default=None, help="IG baseline point, comma-separated")
    p.add_argument("--ref", default=None, help="reference CSV for eig/sv/zscore")
    p.add_argument("--n-intervals", type=int, default=100)
    p.add_argument("--sv-configs", type=int, default=100)
    p.add_argument("--lime-samples", type=int, default=1000)
    p.add_argument("--lime-std", type=float, default=0.3)
    p.add_argument("--lime-l1", type=float, default=0.01)
    p.add_argument("--prior-eta", type=float, default=0.1)
    p.add_argument("--noise-lambda", type=float, default=1.0)
    p.add_argument("--lc-lambda", type=float, default=1.0)
    p.add_argument("--lc-kappa", type=float, default=0.01)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anomattr",
        description="Black-box anomaly attribution toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="rank samples by anomaly score")
    _add_common(p)
    p.add_argument("--noise-var", type=float, default=None)
    p.add_argument("--top", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("explain", help="attribution scores and litmus plot")
    _add_common(p)
    _add_selection(p)
    _add_gpa_flags(p)
    _add_method_flags(p)
    p.add_argument("--methods", required=True,
                   help=f"comma-separated subset of: {','.join(ALL_METHODS)}")
    p.add_argument("--noise-var", type=float, default=None)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("dist", help="per-variable score distributions")
    _add_common(p)
    _add_selection(p)
    _add_gpa_flags(p)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("compare", help="consistency metrics between methods")
    _add_common(p)
    _add_selection(p)
    _add_gpa_flags(p)
    _add_method_flags(p)
    p.add_argument("--methods", required=True)
    p.add_argument("--reference", default="gpa")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle", help="closed-form sinusoidal values")
    p.add_argument("which", choices=("lime0", "gpa", "ig", "sv"))
    p.add_argument("--x", required=True, help="test point, comma-separated")
    p.add_argument("--y", type=float, default=None)
    p.add_argument("--x0", default=None, help="baseline point (ig only)")
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 3
    except (UsageError, DivergenceError, dataio.CsvFormatError,
            oracle.OracleDomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
