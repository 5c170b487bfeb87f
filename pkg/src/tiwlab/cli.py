"""Command-line experiment orchestration.

Every subcommand is a pure function of (config, seeds): given the same
config file and overrides it reproduces its CSV/JSON outputs byte for
byte. Commands compose through files in the configured output directory:

    gen-data     bias.csv, ref.csv
    train-disc   disc.ckpt (or disc_t0.ckpt with --time-independent)
    train-score  score_<name>.ckpt, telemetry_<name>.csv
    sample       samples.csv, provenance.json
    eval         eval.csv
    repro-fig2   dre_curve.csv, dre_summary.json
    repro-fig3   field_*.csv lattices
    debias       per-baseline subruns, eval_rows.csv, report.json
    sweep-alpha  alpha_sweep.csv, identity_checks.txt
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ExperimentConfig,
    RunReport,
    StageTimer,
    config_hash,
    load_config,
)
from .errors import EXIT_CODES, InputError, IoError, TiwlabError
from .metrics import evaluate_samples
from .net import save_net
from .objectives import (
    ObjectiveSpec,
    ScoreTrainConfig,
    persample_dsm,
    persample_tiw_dsm,
    train_score,
)
from .ratio import (
    DatasetSplit,
    DiscTrainConfig,
    integrated_dre_error,
    load_ratio_model,
    oracle_ratio_model,
    save_ratio_model,
    train_discriminator,
)
from .sampling import GenerationJob, generate, read_samples_csv, write_samples_csv

BASELINES = ("dsm_ref", "dsm_obs", "iw_dsm", "tiw_dsm")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as f:
            f.write(",".join(header) + "\n")
            for row in rows:
                f.write(",".join(row) + "\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _fmt(value):
    return repr(float(value))


def _load_split(cfg: ExperimentConfig) -> DatasetSplit:
    out = cfg.output_dir
    bias_path, ref_path = out / "bias.csv", out / "ref.csv"
    if not bias_path.exists() or not ref_path.exists():
        raise InputError(
            f"training data not found under {out} (run gen-data first)")
    return DatasetSplit(bias_points=read_samples_csv(bias_path),
                        ref_points=read_samples_csv(ref_path))


def _disc_cfg(cfg: ExperimentConfig, time_dependent=True) -> DiscTrainConfig:
    t = cfg.raw["disc_train"]
    n = cfg.raw["disc_net"]
    return DiscTrainConfig(
        steps=t["steps"], batch_size=t["batch_size"],
        learning_rate=t["learning_rate"], seed=cfg.seeds["disc"],
        time_dependent=time_dependent, hidden=tuple(n["hidden"]),
        activation=n["activation"], time_embed=n["time_embed"],
        n_frequencies=n["n_frequencies"], lambda_prime=t["lambda_prime"],
        holdout_fraction=t["holdout_fraction"])


def _score_cfg(cfg: ExperimentConfig, telemetry_path=None) -> ScoreTrainConfig:
    t = cfg.raw["score_train"]
    n = cfg.raw["score_net"]
    obs_stream = t["obs_stream"]
    return ScoreTrainConfig(
        steps=t["steps"], batch_size=t["batch_size"],
        learning_rate=t["learning_rate"], seed=cfg.seeds["score"],
        hidden=tuple(n["hidden"]), activation=n["activation"],
        time_embed=n["time_embed"], n_frequencies=n["n_frequencies"],
        telemetry_every=t["telemetry_every"],
        telemetry_path=str(telemetry_path) if telemetry_path else None,
        obs_stream=None if obs_stream == "auto" else obs_stream,
        lr_decay=t["lr_decay"])


def _ratio_for(cfg: ExperimentConfig, kind):
    """Resolve the ratio model an objective kind needs, or None."""
    if kind in ("dsm",):
        return None
    sched = cfg.schedule
    if cfg.raw["objective"]["ratio"] == "oracle":
        return oracle_ratio_model(cfg.mixture("data"), cfg.mixture("bias"), sched,
                                  time_independent=(kind == "iw_dsm"))
    name = "disc_t0.ckpt" if kind == "iw_dsm" else "disc.ckpt"
    path = cfg.output_dir / name
    if not path.exists():
        raise InputError(f"discriminator checkpoint {path} not found "
                         f"(run train-disc{' --time-independent' if kind == 'iw_dsm' else ''} first)")
    return load_ratio_model(path, sched)


def _objective_spec(cfg: ExperimentConfig, baseline=None) -> ObjectiveSpec:
    o = dict(cfg.raw["objective"])
    stream = None if o["stream"] == "auto" else o["stream"]
    form = None if o["ratio_form"] == "auto" else o["ratio_form"]
    kind = o["kind"]
    if baseline is not None:
        if baseline == "dsm_ref":
            kind, stream = "dsm", "ref"
        elif baseline == "dsm_obs":
            kind, stream = "dsm", "obs"
        else:
            kind = baseline
    ratio = _ratio_for(cfg, kind)
    return ObjectiveSpec(kind=kind, alpha=o["alpha"], tau=o["tau"],
                         lambda_kind=o["lambda_kind"], stream=stream,
                         ratio_form=form, ratio=ratio)


def _fresh_report(cfg: ExperimentConfig) -> RunReport:
    return RunReport(config_hash=config_hash(cfg), library_version=__version__)


def _generate_samples(cfg, source, out_dir, seed=None):
    job = GenerationJob(score_source=source, sched=cfg.schedule,
                        spec=cfg.sampler_spec(seed=seed),
                        n=cfg.raw["eval"]["n_samples"], output=out_dir)
    return generate(job)


def _oracle_reference(cfg):
    return cfg.mixture("data").sample(cfg.raw["eval"]["n_oracle"],
                                      seed=cfg.seeds["eval"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig):
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    bias = cfg.mixture("bias").sample(cfg.raw["split"]["n_bias"],
                                      seed=[cfg.seeds["data"], 0])
    ref = cfg.mixture("data").sample(cfg.raw["split"]["n_ref"],
                                     seed=[cfg.seeds["data"], 1])
    write_samples_csv(out / "bias.csv", bias)
    write_samples_csv(out / "ref.csv", ref)
    print(f"wrote {out / 'bias.csv'} ({bias.shape[0]} rows) and "
          f"{out / 'ref.csv'} ({ref.shape[0]} rows)")
    return 0


def cmd_train_disc(cfg: ExperimentConfig, time_independent=False):
    split = _load_split(cfg)
    rm = train_discriminator(split, cfg.schedule,
                             _disc_cfg(cfg, time_dependent=not time_independent))
    name = "disc_t0.ckpt" if time_independent else "disc.ckpt"
    path = cfg.output_dir / name
    save_ratio_model(rm, path)
    heldout = rm.train_report.get("heldout_tbce")
    print(f"wrote {path}; train BCE {rm.train_report['final_train_bce']:.4f}, "
          f"held-out T-BCE {heldout if heldout == heldout else 'not evaluated'}")
    return 0


def cmd_train_score(cfg: ExperimentConfig, baseline=None):
    split = _load_split(cfg)
    spec = _objective_spec(cfg, baseline)
    name = baseline or spec.kind
    out = cfg.output_dir
    telemetry = out / f"telemetry_{name}.csv"
    net = train_score(split, spec, cfg.schedule, _score_cfg(cfg, telemetry))
    path = out / f"score_{name}.ckpt"
    save_net(net, path, extra={"role": "score", "objective": name})
    print(f"wrote {path}")
    return 0


def cmd_sample(cfg: ExperimentConfig, source=None):
    out = cfg.output_dir
    if source in (None, "score"):
        name = cfg.raw["objective"]["kind"]
        src = out / f"score_{name}.ckpt"
        if not src.exists():
            raise InputError(f"score checkpoint {src} not found (run train-score)")
    elif source == "oracle-data":
        src = cfg.mixture("data")
    elif source == "oracle-bias":
        src = cfg.mixture("bias")
    else:
        src = Path(source)
    _, prov = _generate_samples(cfg, src, out)
    print(f"wrote {out / 'samples.csv'} (source hash {prov['source_hash'][:12]})")
    return 0


def cmd_eval(cfg: ExperimentConfig, samples_path=None, label="run"):
    out = cfg.output_dir
    samples = read_samples_csv(Path(samples_path) if samples_path
                               else out / "samples.csv")
    report = evaluate_samples(samples, _oracle_reference(cfg),
                              cfg.mixture("data"), notes=label)
    _write_csv(out / "eval.csv", report.csv_header(), [report.csv_row()])
    print(f"bias {report.bias:.4f}, proportions "
          f"{np.array2string(report.proportions, precision=4)}, "
          f"energy distance {report.energy_distance:.5f}")
    return 0


def cmd_repro_fig2(cfg: ExperimentConfig):
    """Ratio-error curve of time-dependent vs single-time discriminators."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    split = _load_split(cfg)
    sched = cfg.schedule
    rm_dep = train_discriminator(split, sched, _disc_cfg(cfg, time_dependent=True))
    rm_indep = train_discriminator(split, sched, _disc_cfg(cfg, time_dependent=False))
    save_ratio_model(rm_dep, out / "disc.ckpt")
    save_ratio_model(rm_indep, out / "disc_t0.ckpt")
    oracle = oracle_ratio_model(cfg.mixture("data"), cfg.mixture("bias"), sched)
    scan = integrated_dre_error(rm_dep, rm_indep, oracle,
                                np.asarray(cfg.raw["eval"]["dre_grid"]),
                                n=cfg.raw["eval"]["dre_n"],
                                seed=cfg.seeds["eval"])
    _write_csv(out / "dre_curve.csv",
               ["t", "mse_time_dep", "mse_time_indep"],
               [[_fmt(t), _fmt(a), _fmt(b)] for t, a, b in scan.per_t])
    summary = {
        "integrated_ratio": scan.ratio,
        "integral_time_dep": float(np.trapezoid(scan.mse_time_dep, scan.grid)),
        "integral_time_indep": float(np.trapezoid(scan.mse_time_indep, scan.grid)),
        "config_hash": config_hash(cfg),
    }
    import json
    (out / "dre_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"integrated error ratio (time-dep / time-indep): {scan.ratio:.4f}")
    print(f"wrote {out / 'dre_curve.csv'} and {out / 'dre_summary.json'}")
    return 0


def cmd_repro_fig3(cfg: ExperimentConfig):
    """Vector-field lattices of the two scores and the ratio correction at t=0."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    bias, data = cfg.mixture("bias"), cfg.mixture("data")
    if bias.dim != 2:
        raise InputError("field lattices are only defined for 2-D mixtures")
    g = cfg.raw["field_grid"]
    axis = np.linspace(-g["extent"], g["extent"], g["resolution"])
    xs, ys = np.meshgrid(axis, axis, indexing="ij")
    lattice = np.column_stack([xs.ravel(), ys.ravel()])
    score_bias = bias.score(lattice)
    score_data = data.score(lattice)
    oracle = oracle_ratio_model(data, bias, cfg.schedule)
    grad_w = oracle.grad_log_w(lattice, 0.0)
    w = oracle.ratio_w(lattice, 0.0)

    def field_rows(values):
        return [[_fmt(x[0]), _fmt(x[1])] + [_fmt(v) for v in np.atleast_1d(val)]
                for x, val in zip(lattice, values)]

    _write_csv(out / "field_score_bias.csv", ["x0", "x1", "v0", "v1"],
               field_rows(score_bias))
    _write_csv(out / "field_score_data.csv", ["x0", "x1", "v0", "v1"],
               field_rows(score_data))
    _write_csv(out / "field_grad_log_w.csv", ["x0", "x1", "v0", "v1"],
               field_rows(grad_w))
    _write_csv(out / "field_w.csv", ["x0", "x1", "w"], field_rows(w))
    print(f"wrote 4 lattice files ({lattice.shape[0]} rows each) under {out}")
    return 0


def cmd_debias(cfg: ExperimentConfig, all_baselines=False):
    """Full pipeline: data -> discriminators -> score training -> evaluation."""
    out = cfg.output_dir
    report = _fresh_report(cfg)
    with StageTimer(report, "gen-data"):
        cmd_gen_data(cfg)
    report.add_artifact(out / "bias.csv")
    report.add_artifact(out / "ref.csv")
    split = _load_split(cfg)
    sched = cfg.schedule

    baselines = list(BASELINES) if all_baselines else [cfg.raw["objective"]["kind"]]
    kinds = ["dsm" if b in ("dsm_ref", "dsm_obs") else b for b in baselines]
    learned = cfg.raw["objective"]["ratio"] == "learned"
    needs_dep = learned and any(k not in ("dsm", "iw_dsm") for k in kinds)
    needs_t0 = learned and "iw_dsm" in kinds
    if needs_dep:
        with StageTimer(report, "train-disc"):
            rm = train_discriminator(split, sched, _disc_cfg(cfg, True))
            save_ratio_model(rm, out / "disc.ckpt")
        report.checkpoints["disc"] = str(out / "disc.ckpt")
        report.add_artifact(out / "disc.ckpt")
    if needs_t0:
        with StageTimer(report, "train-disc-t0"):
            rm0 = train_discriminator(split, sched, _disc_cfg(cfg, False))
            save_ratio_model(rm0, out / "disc_t0.ckpt")
        report.checkpoints["disc_t0"] = str(out / "disc_t0.ckpt")
        report.add_artifact(out / "disc_t0.ckpt")

    oracle_ref = _oracle_reference(cfg)
    classifier = cfg.mixture("data")
    rows = []
    for baseline in baselines:
        sub = out / baseline
        sub.mkdir(parents=True, exist_ok=True)
        spec = _objective_spec(cfg, baseline)
        telemetry = sub / "telemetry.csv"
        with StageTimer(report, f"train-score[{baseline}]"):
            net = train_score(split, spec, sched, _score_cfg(cfg, telemetry))
        ckpt = sub / "score.ckpt"
        save_net(net, ckpt, extra={"role": "score", "objective": baseline})
        report.checkpoints[baseline] = str(ckpt)
        for p in (ckpt, telemetry):
            report.add_artifact(p)
        with StageTimer(report, f"sample[{baseline}]"):
            samples, _ = _generate_samples(cfg, ckpt, sub)
        report.add_artifact(sub / "samples.csv")
        report.add_artifact(sub / "provenance.json")
        with StageTimer(report, f"eval[{baseline}]"):
            ev = evaluate_samples(samples, oracle_ref, classifier, notes=baseline)
        rows.append(ev)
        report.metrics.append({
            "label": baseline,
            "bias": ev.bias,
            "proportions": ev.proportions.tolist(),
            "energy_distance": ev.energy_distance,
        })
        print(f"{baseline}: bias {ev.bias:.4f}, minority proportion "
              f"{ev.proportions[-1]:.4f}, energy distance {ev.energy_distance:.5f}")

    header = ["label"] + rows[0].csv_header()
    _write_csv(out / "eval_rows.csv", header,
               [[r.notes] + r.csv_row() for r in rows])
    report.add_artifact(out / "eval_rows.csv")
    report.write(out / "report.json")
    report.add_artifact(out / "report.json")
    print(f"wrote {out / 'eval_rows.csv'} and {out / 'report.json'}")
    return 0


def cmd_sweep_alpha(cfg: ExperimentConfig, alphas):
    """One TIW training per ratio-scaling value; logs the endpoint identities."""
    if any(a < 0 for a in alphas):
        raise InputError("alpha values must be >= 0")
    out = cfg.output_dir
    report = _fresh_report(cfg)
    with StageTimer(report, "gen-data"):
        cmd_gen_data(cfg)
    split = _load_split(cfg)
    sched = cfg.schedule
    if cfg.raw["objective"]["ratio"] == "learned":
        with StageTimer(report, "train-disc"):
            rm = train_discriminator(split, sched, _disc_cfg(cfg, True))
            save_ratio_model(rm, out / "disc.ckpt")
    else:
        rm = oracle_ratio_model(cfg.mixture("data"), cfg.mixture("bias"), sched)

    checks = _endpoint_identity_checks(cfg, split, sched, rm)
    (out / "identity_checks.txt").write_text("".join(checks))

    oracle_ref = _oracle_reference(cfg)
    classifier = cfg.mixture("data")
    rows = []
    for alpha in alphas:
        sub = out / f"alpha_{alpha:g}"
        sub.mkdir(parents=True, exist_ok=True)
        spec = ObjectiveSpec(kind="tiw_alpha", alpha=alpha,
                             lambda_kind=cfg.raw["objective"]["lambda_kind"],
                             ratio=rm)
        with StageTimer(report, f"train[alpha={alpha:g}]"):
            net = train_score(split, spec, sched, _score_cfg(cfg))
        ckpt = sub / "score.ckpt"
        save_net(net, ckpt, extra={"role": "score", "objective": f"tiw_alpha@{alpha:g}"})
        samples, _ = _generate_samples(cfg, ckpt, sub)
        ev = evaluate_samples(samples, oracle_ref, classifier, notes=f"alpha={alpha:g}")
        rows.append((alpha, ev))
        print(f"alpha {alpha:g}: bias {ev.bias:.4f}, energy distance "
              f"{ev.energy_distance:.5f}")
    _write_csv(out / "alpha_sweep.csv", ["alpha", "bias", "energy_distance"],
               [[_fmt(a), _fmt(e.bias), _fmt(e.energy_distance)] for a, e in rows])
    report.write(out / "report.json")
    print(f"wrote {out / 'alpha_sweep.csv'}")
    return 0


def _endpoint_identity_checks(cfg, split, sched, rm):
    """Per-sample identities at the sweep endpoints, logged for the record."""
    rng = np.random.default_rng(cfg.seeds["score"])
    pool = split.pooled
    idx = rng.integers(0, pool.shape[0], 16)
    lines = []
    lam = cfg.raw["objective"]["lambda_kind"]
    from .net import Mlp
    probe_net = Mlp(split.dim, [8], split.dim, seed=cfg.seeds["score"])
    worst0 = 0.0
    worst1 = 0.0
    for x0 in pool[idx]:
        t = float(rng.uniform(sched.t_eps, sched.T))
        eps = rng.standard_normal(split.dim)
        a0 = persample_tiw_dsm(probe_net, x0, t, eps, sched, rm, lam, alpha=0.0)
        d = persample_dsm(probe_net, x0, t, eps, sched, lam)
        worst0 = max(worst0, abs(a0 - d))
        a1 = persample_tiw_dsm(probe_net, x0, t, eps, sched, rm, lam, alpha=1.0)
        t1 = persample_tiw_dsm(probe_net, x0, t, eps, sched, rm, lam)
        worst1 = max(worst1, abs(a1 - t1))
    lines.append(f"alpha=0 per-sample loss == dsm on shared batch: "
                 f"max |diff| = {worst0!r} (exact identity expected)\n")
    lines.append(f"alpha=1 per-sample loss == tiw_dsm on shared batch: "
                 f"max |diff| = {worst1!r} (exact identity expected)\n")
    return lines


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                   help="override a config field (dotted path, repeatable)")
    p.add_argument("--output-dir", help="shortcut for --set output_dir=...")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tiwlab",
        description="Debiasing diffusion models on analytic Gaussian mixtures "
                    "with time-dependent importance reweighting.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample the bias/reference datasets")
    _add_common(p)
    p.set_defaults(func=lambda cfg, args: cmd_gen_data(cfg))

    p = sub.add_parser("train-disc", help="train the ratio discriminator")
    _add_common(p)
    p.add_argument("--time-independent", action="store_true",
                   help="pin the time input to 0 (single-time baseline)")
    p.set_defaults(func=lambda cfg, args: cmd_train_disc(cfg, args.time_independent))

    p = sub.add_parser("train-score", help="train a score network")
    _add_common(p)
    p.add_argument("--baseline", choices=BASELINES,
                   help="override the objective with a named baseline")
    p.set_defaults(func=lambda cfg, args: cmd_train_score(cfg, args.baseline))

    p = sub.add_parser("sample", help="generate samples from a score source")
    _add_common(p)
    p.add_argument("--source", help="checkpoint path, 'oracle-data' or 'oracle-bias' "
                                    "(default: the configured objective's checkpoint)")
    p.add_argument("--kind", choices=["probability-flow-ode", "reverse-sde"],
                   help="sampler kind override")
    p.add_argument("--steps", type=int, help="integration steps override")
    p.add_argument("--integrator", choices=["euler", "heun"],
                   help="integrator override")
    p.add_argument("--seed", type=int, help="sampling seed override")
    p.set_defaults(func=_run_sample)

    p = sub.add_parser("eval", help="evaluate a sample set against the oracle")
    _add_common(p)
    p.add_argument("--samples", help="samples CSV (default: output_dir/samples.csv)")
    p.add_argument("--label", default="run", help="label recorded in eval.csv")
    p.set_defaults(func=lambda cfg, args: cmd_eval(cfg, args.samples, args.label))

    p = sub.add_parser("repro-fig2",
                       help="density-ratio error curve and integrated-error ratio")
    _add_common(p)
    p.set_defaults(func=lambda cfg, args: cmd_repro_fig2(cfg))

    p = sub.add_parser("repro-fig3", help="score/correction vector-field lattices")
    _add_common(p)
    p.set_defaults(func=lambda cfg, args: cmd_repro_fig3(cfg))

    p = sub.add_parser("debias", help="full pipeline incl. training and evaluation")
    _add_common(p)
    p.add_argument("--all-baselines", action="store_true",
                   help="run dsm_ref, dsm_obs, iw_dsm and tiw_dsm")
    p.set_defaults(func=lambda cfg, args: cmd_debias(cfg, args.all_baselines))

    p = sub.add_parser("sweep-alpha", help="sweep the ratio-scaling exponent")
    _add_common(p)
    p.add_argument("--alphas", default="0,0.5,1",
                   help="comma-separated alpha values")
    p.set_defaults(func=_run_sweep)
    return parser


def _run_sample(cfg, args):
    overrides = []
    for name in ("kind", "steps", "integrator"):
        value = getattr(args, name)
        if value is not None:
            overrides.append(f"sampler.{name}={value}")
    if args.seed is not None:
        overrides.append(f"seeds.sample={args.seed}")
    if overrides:
        cfg = ExperimentConfig(raw=_merge_overrides(cfg, overrides))
    return cmd_sample(cfg, args.source)


def _merge_overrides(cfg, overrides):
    from .config import apply_overrides
    return apply_overrides(cfg.to_dict(), overrides)


def _run_sweep(cfg, args):
    try:
        alphas = [float(v) for v in args.alphas.split(",") if v.strip() != ""]
    except ValueError as e:
        raise InputError(f"cannot parse --alphas {args.alphas!r}: {e}") from e
    if not alphas:
        raise InputError("--alphas must name at least one value")
    return cmd_sweep_alpha(cfg, alphas)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = list(args.overrides or [])
        if args.output_dir:
            overrides.append(f"output_dir={args.output_dir}")
        cfg = load_config(args.config, overrides)
        return args.func(cfg, args)
    except TiwlabError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return EXIT_CODES.get(e.category, 1)


if __name__ == "__main__":
    sys.exit(main())
