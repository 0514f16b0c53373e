"""Command-line front end.

Exit codes: 0 on success, 1 when ``selfcheck`` finds a failing check, 2 on
invalid inputs or data files, 64 on usage errors.
"""

from __future__ import annotations

import json
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import click
import numpy as np
from scipy import stats

from . import __version__, amplicon, contour, default_frequencies, default_kit, default_noise, default_profiles, \
    genomic, io, pgf
from .errors import PcrPgfError
from .estimation import FitOptions, FitResult, fit as fit_model, lr_bans, qq_diagnostic
from .likelihood import MODELS, Evaluator
from .sample import Contributor, SampleConfig
from .simulate import simulate_epg

EXIT_VALIDATION = 2
EXIT_USAGE = 64
CONFIG_ENV = "PCRPGF_CONFIG"
CONFIG_KEYS = ("psi", "pi_f", "delta", "K", "rho", "threshold", "theta", "stutter_mode", "dropin_model")


def g17(x) -> str:
    return f"{float(x):.17g}"


def g6(x) -> str:
    return f"{float(x):.6g}"


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


def _csv(columns, rows) -> str:
    lines = [",".join(columns)]
    lines += [",".join(r) for r in rows]
    return "\n".join(lines) + "\n"


def _fraction(text: str) -> float:
    """Accept plain numbers and ratios such as ``2/11``."""
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise click.BadParameter(f"not a number: {text!r}") from None


class Number(click.ParamType):
    name = "number"

    def convert(self, value, param, ctx):
        if isinstance(value, float):
            return value
        try:
            return _fraction(str(value))
        except click.BadParameter as e:
            self.fail(str(e), param, ctx)


NUMBER = Number()


# ----------------------------------------------------------------------
# root group


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="pcrpgf")
@click.option("--threads", type=click.IntRange(1), default=None,
              help="Worker threads for per-locus evaluation (default: logical cores).")
@click.pass_context
def cli(ctx, threads):
    """Exact PCR branching-process distributions and STR profile likelihoods."""
    ctx.ensure_object(dict)
    ctx.obj["threads"] = threads or os.cpu_count() or 1


# ----------------------------------------------------------------------
# single-amplicon and single-genome distributions


def _pcr_options(f):
    f = click.option("--p", "p", type=NUMBER, default=0.85, show_default=True, help="Copy probability per cycle.")(f)
    f = click.option("--xi", type=NUMBER, default=0.0, show_default=True,
                     help="Stutter probability given a copy (one repeat back).")(f)
    f = click.option("--xi-r", type=NUMBER, default=0.0, show_default=True,
                     help="Double back stutter probability (genomic, full rules).")(f)
    f = click.option("--xi-f", type=NUMBER, default=0.0, show_default=True,
                     help="Forward stutter probability (genomic, full rules).")(f)
    f = click.option("--K", "K", type=click.IntRange(0), default=28, show_default=True, help="PCR cycles.")(f)
    f = click.option("--M", "M", type=click.IntRange(0), default=1, show_default=True,
                     help="Starting amplicons or genome pairs.")(f)
    f = click.option("--phi", type=NUMBER, default=1.0, show_default=True,
                     help="Probability each starting unit is amplified (accepts a/b).")(f)
    f = click.option("--stutter", type=click.Choice(genomic.MODES), default=None,
                     help="Genomic stutter rules (default: none, or single when tracking offset -1).")(f)
    f = click.option("--track", type=click.Choice(["target", "stutter"]), default="target", show_default=True,
                     help="Product whose count is reported.")(f)
    f = click.option("--order", type=click.Choice(["-2", "-1", "1"]), default="-1", show_default=True,
                     help="Stutter offset tracked by the genomic model with --track stutter.")(f)
    return f


def _genomic_setup(p, xi, xi_r, xi_f, K, M, phi, stutter, track, order):
    o = 0 if track == "target" else int(order)
    mode = stutter or ("none" if o == 0 else ("single" if o == -1 else "full"))
    if mode == "none" and o != 0:
        raise click.UsageError("stutter products need --stutter single or full")
    if mode == "single" and o not in (0, -1):
        raise click.UsageError("offsets -2 and +1 need --stutter full")
    params = genomic.GenomicParams.uniform(p, xi_s=xi, xi_r=xi_r if mode == "full" else 0.0,
                                           xi_f=xi_f if mode == "full" else 0.0, K=K, M=M, phi=phi)
    return params, mode, o


@cli.command()
@click.argument("model", type=click.Choice(["amplicon", "genomic"]))
@_pcr_options
@click.option("--out", type=click.Path(dir_okay=False, writable=True), help="CSV output file (default: stdout).")
def dist(model, p, xi, xi_r, xi_f, K, M, phi, stutter, track, order, out):
    """Full distribution of the final product count as a CSV of count,probability."""
    if model == "amplicon":
        params = amplicon.AmpliconParams(p, xi, K, M, phi)
        probs = amplicon.target_dist(params) if track == "target" else amplicon.stutter_marginal(params)
    else:
        params, mode, o = _genomic_setup(p, xi, xi_r, xi_f, K, M, phi, stutter, track, order)
        probs = genomic.tagged_dist(params, mode) if o == 0 else genomic.tagged_stutter_dist(params, o, mode)
    _emit(_csv(("count", "probability"), ([str(i), g17(v)] for i, v in enumerate(probs))), out)


@cli.command()
@click.argument("model", type=click.Choice(["amplicon", "genomic"]))
@_pcr_options
@click.option("--poisson", "lam", type=NUMBER, default=None,
              help="Poisson number of starting units with this mean instead of Binomial(M, phi).")
def moments(model, p, xi, xi_r, xi_f, K, M, phi, stutter, track, order, lam):
    """Means, variances, covariance and correlation of target and stutter counts."""
    if model == "amplicon":
        amplicon.AmpliconParams(p, xi, K, M, phi)
        one = amplicon.moments(p, xi, K)
    else:
        mode = stutter or ("single" if xi > 0 else "none")
        track = "target" if mode == "none" else "stutter"
        params, mode, o = _genomic_setup(p, xi, xi_r, xi_f, K, M, phi, mode, track, order)
        one = genomic.moment_matrices(params, K, with_stutter=o != 0, mode=mode, order=o or -1)
    sampling = amplicon.Poisson(lam) if lam is not None else amplicon.Binomial(M, phi)
    ms = amplicon.sampled_moments(one, sampling)
    rows = [("mean_target", ms.mean_target), ("mean_stutter", ms.mean_stutter), ("var_target", ms.var_target),
            ("var_stutter", ms.var_stutter), ("cov", ms.cov), ("correlation", ms.correlation)]
    for k, v in rows:
        click.echo(f"{k}: {g6(v)}")


@cli.command()
@click.argument("model", type=click.Choice(["amplicon", "genomic"]))
@_pcr_options
@click.option("--at", "at", type=click.IntRange(0), default=None, help="Point probability P(X = n).")
@click.option("--below", type=click.IntRange(0), default=None, help="Cumulative probability P(X <= n).")
@click.option("--L", "L", type=click.IntRange(1), default=None,
              help="Fixed number of contour terms (default: double until settled).")
@click.option("--digits", type=click.IntRange(1, 17), default=6, show_default=True, help="Significant digits.")
def prob(model, p, xi, xi_r, xi_f, K, M, phi, stutter, track, order, at, below, L, digits):
    """One point or cumulative probability by truncated contour summation."""
    if (at is None) == (below is None):
        raise click.UsageError("give exactly one of --at and --below")
    if model == "amplicon":
        amplicon.AmpliconParams(p, xi, K, M, phi)
        spec = contour.ContourSpec.amplicon(p, xi, K, track=track, L=L)
    else:
        params, mode, o = _genomic_setup(p, xi, xi_r, xi_f, K, 1, 1.0, stutter, track, order)
        spec = contour.ContourSpec.genomic(params, mode, orders=(o,), L=L)
    start = time.perf_counter()
    if at is not None:
        res = contour.point_prob_presampled(spec, at, M, phi, report=True)
        label = f"P(X = {at})"
    else:
        res = contour.cumulative_below(spec, below, M, phi, report=True)
        label = f"P(X <= {below})"
    took = time.perf_counter() - start
    click.echo(f"{label} = {res.value:.{digits}g}")
    state = "exact" if res.exact else f"last change {g6(res.change)}"
    click.echo(f"terms: {res.L} ({state}); {took * 1e3:.3g} ms")


# ----------------------------------------------------------------------
# profile-level commands


def _load_config(path):
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise click.UsageError(f"cannot read config {path}: {e}") from None
    unknown = set(data) - set(CONFIG_KEYS) - {"kit", "freqs", "profiles", "noise"}
    if unknown:
        raise click.UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return data


def _sample_options(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     envvar=CONFIG_ENV, help=f"JSON file of defaults (also ${CONFIG_ENV})."),
        click.option("--kit", type=click.Path(exists=True, dir_okay=False), help="Kit file (default: bundled)."),
        click.option("--freqs", type=click.Path(exists=True, dir_okay=False),
                     help="Allele frequency file (default: bundled)."),
        click.option("--profiles", type=click.Path(exists=True, dir_okay=False),
                     help="Reference profiles file (default: bundled)."),
        click.option("--noise", type=str, default=None,
                     help="Noise file, or 'none' for no baseline noise (default: bundled)."),
        click.option("--threshold", type=click.IntRange(0), default=None, help="Analytic threshold in RFU [30]."),
        click.option("--rho", type=NUMBER, default=None, help="Amplicons per RFU [800000]."),
        click.option("--psi", type=NUMBER, default=None, help="Aliquot fraction [1]."),
        click.option("--pi-f", "pi_f", type=NUMBER, default=None, help="Extraction efficiency [1]."),
        click.option("--delta", type=NUMBER, default=None, help="Degradation per base pair [0]."),
        click.option("--cycles", "K", type=click.IntRange(0), default=None, help="PCR cycles [28]."),
        click.option("--theta", type=NUMBER, default=None, help="Coancestry coefficient [0.02]."),
        click.option("--stutter", "stutter_mode", type=click.Choice(genomic.MODES), default=None,
                     help="Stutter products modelled [full]."),
        click.option("--dropin-model", type=click.Choice(["genomic", "amplicon"]), default=None,
                     help="Starting unit of drop-in [genomic]."),
        click.option("--dropin-rate", type=NUMBER, default=None, help="Override the kit's drop-in rate per locus."),
        click.option("--xi", "stutter_xi", type=NUMBER, default=None,
                     help="Override every allele's back stutter probability (double and forward set to 0)."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


SAMPLE_ARGS = ("config_path", "kit", "freqs", "profiles", "noise", "threshold", "rho", "psi", "pi_f", "delta", "K",
               "theta", "stutter_mode", "dropin_model", "dropin_rate", "stutter_xi")


class Setup:
    """Kit, frequencies, profiles and sample configuration assembled from options."""

    def __init__(self, kw):
        conf = _load_config(kw.get("config_path"))
        pick = lambda k: kw.get(k) if kw.get(k) is not None else conf.get(k)
        kit_path, freq_path, prof_path, noise_arg = (pick(k) for k in ("kit", "freqs", "profiles", "noise"))
        self.kit = io.load_kit(kit_path) if kit_path else default_kit()
        self.freqs = io.load_frequencies(freq_path) if freq_path else default_frequencies()
        self.profiles = io.load_profiles(prof_path) if prof_path else default_profiles()
        if noise_arg == "none":
            noise = {}
        elif noise_arg:
            noise = io.load_noise(noise_arg)
        else:
            noise = default_noise()
        if kw.get("dropin_rate") is not None:
            self.kit = self.kit.with_dropin_rate(kw["dropin_rate"])
        if kw.get("stutter_xi") is not None:
            self.kit = self.kit.with_stutter(kw["stutter_xi"], 0.0, 0.0)
        cfg = {k: pick(k) for k in CONFIG_KEYS if pick(k) is not None}
        self.cfg = SampleConfig(noise=noise, **cfg)


def _setup(kw) -> Setup:
    return Setup({k: kw.pop(k) for k in SAMPLE_ARGS})


def _hypothesis(setup: Setup, path, fit_json=None):
    entries = io.load_hypothesis(path)
    contributors = io.contributors_from(entries, setup.profiles)
    cfg = setup.cfg
    if fit_json:
        res = FitResult.from_json(Path(fit_json).read_text())
        contributors = [c.with_cells(res.cells.get(c.id, c.cells)) for c in contributors]
        cfg = cfg.replace(delta=res.delta_hat)
    return entries, contributors, cfg


def _parse_contributors(text: str, setup: Setup) -> list[Contributor]:
    out = []
    for item in text.split(","):
        name, sep, cells = item.strip().partition(":")
        if not sep:
            raise click.UsageError("contributors are given as ID:CELLS[,ID:CELLS...]")
        try:
            n = int(cells)
        except ValueError:
            raise click.UsageError(f"cell count {cells!r} is not an integer") from None
        if name not in setup.profiles:
            raise click.UsageError(f"profile {name} not found")
        out.append(Contributor(name, setup.profiles[name].genotype, n))
    return out


@cli.command()
@_sample_options
@click.option("--contributors", required=True, help="ID:CELLS pairs, e.g. P1:50,P2:200.")
@click.option("--seed", type=int, default=1, show_default=True, help="Random seed.")
@click.option("--no-censor", is_flag=True, help="Keep peaks below the analytic threshold.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True), help="EPG output file (default: stdout).")
def simulate(contributors, seed, no_censor, out, **kw):
    """Simulate one EPG from reference profiles."""
    setup = _setup(kw)
    people = _parse_contributors(contributors, setup)
    rng = np.random.default_rng(seed)
    epg = simulate_epg(people, setup.cfg, setup.kit, rng, setup.freqs, censor=not no_censor)
    _emit(io.write_epg(epg), out)


@cli.command()
@_sample_options
@click.option("--epg", "epg_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--hypothesis", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", type=click.Choice(MODELS), default="fft", show_default=True)
@click.option("--fit", "fit_json", type=click.Path(exists=True, dir_okay=False),
              help="Take cell counts and degradation from a fit result.")
@click.pass_context
def loglik(ctx, epg_path, hypothesis, model, fit_json, **kw):
    """Log-likelihood of an EPG under a hypothesis, in total and per locus."""
    setup = _setup(kw)
    _, people, cfg = _hypothesis(setup, hypothesis, fit_json)
    epg = io.load_epg(epg_path)
    res = Evaluator(setup.kit, setup.freqs, cfg, model, ctx.obj["threads"]).profile_loglik(epg, people)
    click.echo(f"loglik: {g6(res.total)}")
    for name, v in res.per_locus.items():
        click.echo(f"  {name}: {g6(v)}")


@cli.command()
@_sample_options
@click.option("--epg", "epg_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--hypothesis", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", type=click.Choice(MODELS), default="fft", show_default=True)
@click.option("--fit-delta/--fix-delta", default=True, show_default=True,
              help="Search the degradation grid or keep --delta fixed.")
@click.option("--max-sweeps", type=click.IntRange(1), default=50, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True), help="Fit result JSON.")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False, writable=True),
              help="CSV of accepted search steps.")
@click.pass_context
def fit(ctx, epg_path, hypothesis, model, fit_delta, max_sweeps, out, trace_path, **kw):
    """Maximum-likelihood cell counts (and degradation) for a hypothesis."""
    setup = _setup(kw)
    entries, people, cfg = _hypothesis(setup, hypothesis)
    epg = io.load_epg(epg_path)
    init = tuple(e.cells for e in entries) if any(e.cells for e in entries if e.free) else None
    opts = FitOptions(fit_delta=fit_delta, max_sweeps=max_sweeps, init_cells=init)
    res = fit_model(epg, people, setup.kit, cfg, model, setup.freqs, [e.free for e in entries], opts,
                    ctx.obj["threads"])
    if out:
        Path(out).write_text(res.to_json() + "\n")
    if trace_path:
        ids = [c.id for c in people]
        rows = ([*(str(x) for x in cells), g17(d), g17(v)] for cells, d, v in res.trace)
        Path(trace_path).write_text(_csv((*ids, "delta", "loglik"), rows))
    click.echo(f"model: {model}")
    click.echo(f"loglik: {g6(res.ll_max)}")
    for cid, n in res.cells.items():
        click.echo(f"cells {cid}: {n}")
    click.echo(f"delta: {g6(res.delta_hat)}")
    click.echo(f"evaluations: {res.evaluations}")
    if res.note:
        click.echo(f"note: {res.note}")


@cli.command()
@click.option("--fit-a", type=click.Path(exists=True, dir_okay=False), help="Fit result of the numerator.")
@click.option("--fit-b", type=click.Path(exists=True, dir_okay=False), help="Fit result of the denominator.")
@click.option("--ll-a", type=float, default=None, help="Numerator log-likelihood (natural log).")
@click.option("--ll-b", type=float, default=None, help="Denominator log-likelihood (natural log).")
def lr(fit_a, fit_b, ll_a, ll_b):
    """Weight of evidence in bans (log10 likelihood ratio) between two hypotheses."""
    if fit_a:
        ll_a = FitResult.from_json(Path(fit_a).read_text()).ll_max
    if fit_b:
        ll_b = FitResult.from_json(Path(fit_b).read_text()).ll_max
    if ll_a is None or ll_b is None:
        raise click.UsageError("give --fit-a/--ll-a and --fit-b/--ll-b")
    click.echo(f"log10 LR: {lr_bans(ll_a, ll_b):.6g} bans")


@cli.command()
@_sample_options
@click.option("--epg", "epg_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--hypothesis", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", type=click.Choice(MODELS), default="fft", show_default=True)
@click.option("--fit", "fit_json", type=click.Path(exists=True, dir_okay=False),
              help="Take cell counts and degradation from a fit result.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True), help="CSV of expected,observed pairs.")
def qq(epg_path, hypothesis, model, fit_json, out, **kw):
    """Conditional-CDF QQ diagnostic of the observed peaks, with a KS test against uniform."""
    setup = _setup(kw)
    _, people, cfg = _hypothesis(setup, hypothesis, fit_json)
    epg = io.load_epg(epg_path)
    pts = qq_diagnostic(epg, people, setup.kit, cfg, model, setup.freqs)
    if out:
        Path(out).write_text(_csv(("expected", "observed"), ([g17(a), g17(b)] for a, b in pts)))
    if pts:
        ks = stats.kstest([b for _, b in pts], "uniform")
        click.echo(f"peaks: {len(pts)}")
        click.echo(f"ks statistic: {g6(ks.statistic)}")
        click.echo(f"ks p-value: {g6(ks.pvalue)}")
    else:
        click.echo("peaks: 0")


# ----------------------------------------------------------------------
# selfcheck


def _checks():
    for n in (0, 1, 2, 5, 10, 15, 20):
        got = genomic.deterministic_counts(n)["a_d"] if n else 0
        yield f"eulerian n={n}: {got}", got == 2**n - n - 1

    spec = contour.ContourSpec.amplicon(0.8, 0.0, 28)
    v = contour.point_prob_presampled(spec, 0, 1, 2 / 11)
    yield f"dropout K=28 p=0.8 phi=2/11: {g6(v)}", abs(v - 9 / 11) < 1e-12

    worst = 0.0
    for p in (0.8, 0.85):
        for xi in (0.0, 0.004, 0.03):
            for K in (8, 12, 16):
                a, b = amplicon.moments(p, xi, K), amplicon.moments_by_recursion(p, xi, K)
                for x, y in ((a.mean_target, b.mean_target), (a.var_target, b.var_target),
                             (a.mean_stutter, b.mean_stutter), (a.var_stutter, b.var_stutter), (a.cov, b.cov)):
                    if y:
                        worst = max(worst, abs(x - y) / abs(y))
    yield f"amplicon moments closed form vs recursion: max rel {g6(worst)}", worst < 1e-9

    params = amplicon.AmpliconParams(0.85, 0.03, 12)
    d = amplicon.target_dist(params)
    m, var = pgf.moments_of(d)
    ref = amplicon.moments(0.85, 0.03, 12)
    err = max(abs(m - ref.mean_target) / ref.mean_target, abs(var - ref.var_target) / ref.var_target)
    yield f"amplicon distribution vs closed-form moments K=12: max rel {g6(err)}", err < 1e-6

    gp = genomic.GenomicParams.uniform(0.85, K=14)
    a, b = genomic.mean_tagged(gp), genomic.moment_matrices(gp).mean_target
    err = abs(a - b) / b
    yield f"genomic mean closed form vs recursion K=14: rel {g6(err)}", err < 1e-10

    ratio = (genomic.moment_matrices(genomic.GenomicParams.uniform(0.7, K=20)).var_target
             / amplicon.moments(0.7, 0.0, 20).var_target)
    yield f"genomic/amplicon variance ratio n=20: {ratio:.5f}", abs(ratio - 0.49997) < 5e-5

    spec = contour.ContourSpec.amplicon(0.85, 0.0, 12)
    full = amplicon.target_dist(amplicon.AmpliconParams(0.85, 0.0, 12))
    ns = np.arange(0, 4097, 97)
    err = float(np.max(np.abs(contour.point_probs(spec, ns, L=2048) - full[ns])))
    yield f"contour vs FFT K=12: max abs {g6(err)}", err < 1e-12


@cli.command()
def selfcheck():
    """Fast invariant checks; one PASS/FAIL line each."""
    ok = True
    for label, passed in _checks():
        ok &= bool(passed)
        click.echo(f"{label} {'PASS' if passed else 'FAIL'}")
    if not ok:
        raise click.exceptions.Exit(1)


# ----------------------------------------------------------------------
# entry points


def main(argv=None) -> int:
    """Run the command line and return its exit code."""
    try:
        rv = cli.main(args=argv, prog_name="pcrpgf", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_VALIDATION
    except (PcrPgfError, ValueError) as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_VALIDATION
    return rv if isinstance(rv, int) else 0


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
