"""Command-line interface: one verb per pipeline stage plus the HTTP service.

Batch stages run locally on files; ``serve`` starts the prediction service
and ``query`` is its thin client.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import active as al
from . import config, formats, pipeline, wakegen
from .errors import WakeSurrogateError

log = logging.getLogger("wakesurrogate")


def _fail(exc):
    click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc)}), err=True)
    sys.exit(2)


class _Group(click.Group):
    """Turns toolkit errors into a one-line JSON record and exit status 2."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (WakeSurrogateError, FileNotFoundError) as exc:
            _fail(exc)


@click.group(cls=_Group)
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output.")
def main(verbose):
    """Wake-field surrogate toolkit."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# ----------------------------------------------------------------------------
# data


def _generate(n, noise, dropout, seed, out, speedup_rate):
    ds = wakegen.generate_dataset(n, noise, dropout, seed, speedup_rate)
    path = formats.write_dataset(ds, out)
    click.echo(f"wrote {n} scans to {out} ({path.name})")


_gen_options = [
    click.option("--n", "n", type=click.IntRange(min=1), required=True, help="Number of scans."),
    click.option("--noise", type=click.FloatRange(min=0), default=config.DEFAULT_NOISE_SD, show_default=True),
    click.option("--dropout", type=click.FloatRange(0, 0.3), default=config.DEFAULT_DROPOUT, show_default=True),
    click.option("--seed", type=click.IntRange(0, 2**64 - 1), required=True),
    click.option("--out", type=click.Path(file_okay=False), required=True),
    click.option("--speedup-rate", type=click.FloatRange(0, 1), default=0.0, help="Fraction of scans with a lateral speed-up lobe."),
]


def _with(options):
    def deco(f):
        for opt in reversed(options):
            f = opt(f)
        return f

    return deco


@main.command()
@_with(_gen_options)
def generate(n, noise, dropout, seed, out, speedup_rate):
    """Generate a synthetic scan corpus."""
    _generate(n, noise, dropout, seed, out, speedup_rate)


@click.command(name="wakegen")
@_with(_gen_options)
def wakegen_main(n, noise, dropout, seed, out, speedup_rate):
    """Generate a synthetic scan corpus."""
    try:
        _generate(n, noise, dropout, seed, out, speedup_rate)
    except WakeSurrogateError as exc:
        _fail(exc)


# ----------------------------------------------------------------------------
# autoencoder


@main.group(name="ae")
def ae_group():
    """Train the autoencoder, encode corpora, reconstruct scans."""


@ae_group.command("train")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--epochs", type=click.IntRange(min=0), default=50, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), required=True)
@click.option("--k", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--lr", type=click.FloatRange(min=0), default=1e-3, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def ae_train(data, epochs, seed, k, lr, out):
    params = pipeline.train_autoencoder(data, out, epochs, seed, k=k, learning_rate=lr)
    hist = params.meta["loss_history"]
    click.echo(f"trained {params.arch.param_count} parameters; final loss {hist[-1] if hist else float('nan'):.5g}")


@ae_group.command("encode")
@click.option("--model", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def ae_encode(model, data, out):
    z = pipeline.encode_dataset(model, data, out)
    click.echo(f"wrote {len(z)} latent codes to {out}")


@ae_group.command("recon")
@click.option("--model", type=click.Path(exists=True), required=True)
@click.option("--scan", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def ae_recon(model, scan, out):
    from . import autoencoder as ae

    params = ae.load_ae(model)
    s = formats.read_scan(scan)
    if not s.mask.all():
        s = wakegen.impute_missing(s)
    _, recon = ae.ae_forward(params, s)
    formats.write_scan(wakegen.ScanGrid(recon, np.ones(recon.shape, bool), s.x_coords, s.r_coords), out)
    click.echo(f"wrote reconstruction to {out}")


# ----------------------------------------------------------------------------
# regressors


@main.group(name="mlp")
def mlp_group():
    """Multilayer perceptron from parameters to latent codes."""


@mlp_group.command("train")
@click.option("--latents", type=click.Path(exists=True), required=True)
@click.option("--params", type=click.Path(exists=True), required=True)
@click.option("--seed", type=click.IntRange(min=0), required=True)
@click.option("--epochs", type=click.IntRange(min=0), default=300, show_default=True)
@click.option("--widths", default="64,64", show_default=True, help="Hidden layer widths.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def mlp_train(latents, params, seed, epochs, widths, out):
    k = formats.read_latents_csv(latents).shape[1]
    hidden = [int(w) for w in widths.split(",") if w.strip()]
    pipeline.fit_regressor("mlp", params, latents, out, seed=seed, epochs=epochs, widths=[config.N_PARAMS, *hidden, k])
    click.echo(f"wrote {out}")


def _predict(model, params, out):
    mean, _ = pipeline.predict_file(model, params, out)
    click.echo(f"wrote {len(mean)} predictions to {out}")


@mlp_group.command("predict")
@click.option("--model", type=click.Path(exists=True), required=True)
@click.option("--params", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def mlp_predict(model, params, out):
    _predict(model, params, out)


def _gp_group(kind, helptext):
    grp = click.Group(kind, help=helptext)

    @grp.command("fit")
    @click.option("--latents", type=click.Path(exists=True), required=True)
    @click.option("--params", type=click.Path(exists=True), required=True)
    @click.option("--dim", type=click.IntRange(min=0), default=None, help="Latent dimension; all when omitted.")
    @click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
    @click.option("--starts", type=click.IntRange(min=1), default=None, help="Multi-start count.")
    @click.option("--m", "m", type=click.IntRange(min=1), default=64, show_default=True, help="Inducing points (svgp).")
    @click.option("--out", type=click.Path(dir_okay=False), required=True)
    def fit(latents, params, dim, seed, starts, m, out):
        dims = None if dim is None else [dim]
        reg = pipeline.fit_regressor(kind, params, latents, out, seed=seed, n_starts=starts, m=m, dims=dims)
        for d, mdl in zip(reg.dims, reg.models):
            click.echo(f"dim {d}: lengthscale {mdl.lengthscale:.4g} noise {mdl.noise:.4g}")

    @grp.command("predict")
    @click.option("--model", type=click.Path(exists=True), required=True)
    @click.option("--params", type=click.Path(exists=True), required=True)
    @click.option("--out", type=click.Path(dir_okay=False), required=True)
    def predict(model, params, out):
        _predict(model, params, out)

    return grp


main.add_command(_gp_group("gp", "Exact Gaussian process per latent dimension."))
main.add_command(_gp_group("svgp", "Sparse variational Gaussian process per latent dimension."))


# ----------------------------------------------------------------------------
# active learning, evaluation


@main.group(name="al")
def al_group():
    """Active learning for the exact GP."""


@al_group.command("run")
@click.option("--latents", type=click.Path(exists=True), required=True)
@click.option("--params", type=click.Path(exists=True), required=True)
@click.option("--test-latents", type=click.Path(exists=True), required=True)
@click.option("--test-params", type=click.Path(exists=True), required=True)
@click.option("--dim", type=click.IntRange(min=0), required=True)
@click.option("--n0", type=click.IntRange(min=2), default=50, show_default=True)
@click.option("--steps", type=click.IntRange(min=0), default=100, show_default=True)
@click.option("--q", type=click.IntRange(1, 8), default=1, show_default=True)
@click.option("--reps", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), required=True)
@click.option("--baseline-n", type=click.IntRange(min=0), default=250, show_default=True,
              help="Size of the one-shot random baseline; 0 skips it.")
@click.option("--reference", type=click.Choice(["coupled", "box"]), default="coupled", show_default=True,
              help="Reference set for the integrated variance.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def al_run(latents, params, test_latents, test_params, dim, n0, steps, q, reps, seed, baseline_n, reference, out):
    traces, data = pipeline.run_al(params, latents, test_params, test_latents, dim, n0, steps, q, reps, seed,
                                   reference=reference)
    pipeline.write_trace_csv(traces, out)
    final = np.mean([t.final_log_rmse for t in traces])
    click.echo(f"mean final log RMSE {final:.4f} over {reps} repetitions; trace in {out}")
    if baseline_n:
        one = al.one_shot_log_rmse(*data, baseline_n, seed=seed, repetitions=reps)
        click.echo(f"one-shot GP on {baseline_n} random points: mean log RMSE {one.mean():.4f}")


@main.command()
@click.option("--ae-model", type=click.Path(exists=True), required=True)
@click.option("--test-data", type=click.Path(exists=True), required=True)
@click.option("--latents", type=click.Path(exists=True), required=True, help="True test latents.")
@click.option("--predictions", type=click.Path(exists=True), required=True)
@click.option("--name", required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def evaluate(ae_model, test_data, latents, predictions, name, out):
    """Write an evaluation report for one regressor's test predictions."""
    rep = pipeline.evaluate_files(name, ae_model, test_data, latents, predictions, out)
    click.echo(f"{name}: physical NMSE {rep.physical_mean:.4g} (floor {rep.floor_mean:.4g}); R2 "
               + " ".join(f"{v:.3f}" for v in rep.r2))


@main.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(file_okay=False), default=None)
def compare(reports, out):
    """Compare evaluation reports that share a test set."""
    table = pipeline.compare_models(reports, out)
    for r in table["rows"]:
        click.echo(f"{r['model']:>8s}  physical NMSE {r['physical_mean_nmse']:.4g}  x{r['ratio_to_best']:.2f} of best")


# ----------------------------------------------------------------------------
# orchestration and service


@main.command(name="pipeline")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--preset", type=click.Choice(sorted(pipeline.PRESETS)), default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--force", is_flag=True, help="Rerun even when artifacts are up to date.")
@click.option("--write-config", type=click.Path(dir_okay=False), default=None,
              help="Write the resolved config and exit.")
def pipeline_cmd(config_path, preset, out, force, write_config):
    """Run every stage from one JSON config."""
    if (config_path is None) == (preset is None):
        raise click.UsageError("give exactly one of --config or --preset")
    doc = pipeline.preset(preset) if preset else config_path
    cfg = pipeline.parse_config(doc)
    if write_config:
        Path(write_config).write_text(json.dumps(cfg.echo(), sort_keys=True, indent=1) + "\n")
        click.echo(f"wrote {write_config}")
        return
    status = pipeline.run_pipeline(cfg, out, force=force)
    target = out or cfg.output_dir or "wake-experiment"
    if status:
        click.echo((Path(target) / pipeline.ERROR).read_text(), err=True)
        sys.exit(status)
    click.echo(f"artifacts in {target}")


@main.command()
@click.option("--artifacts", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(artifacts, host, port):
    """Serve predictions from a pipeline output directory."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(artifacts), host=host, port=port)


@main.command()
@click.option("--url", default="http://127.0.0.1:8000", show_default=True)
@click.option("--model", default="gp", show_default=True)
@click.option("--params", "params_csv", type=click.Path(exists=True), default=None, help="CSV of operating points.")
@click.option("--point", multiple=True, help="name=value; repeat for all seven inputs.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write predicted latents as CSV.")
@click.option("--field-out", type=click.Path(dir_okay=False), default=None, help="Write the first field as WAKESCAN1.")
def query(url, model, params_csv, point, out, field_out):
    """Ask a running service for predictions."""
    import httpx

    if params_csv:
        rows = formats.read_params_csv(params_csv)
    elif point:
        kv = dict(p.split("=", 1) for p in point)
        missing = set(config.PARAM_NAMES) - set(kv)
        if missing:
            raise click.UsageError(f"missing inputs: {sorted(missing)}")
        rows = np.array([[float(kv[n]) for n in config.PARAM_NAMES]])
    else:
        raise click.UsageError("give --params or --point")
    body = {"model": model, "points": [dict(zip(config.PARAM_NAMES, map(float, r))) for r in rows],
            "include_field": field_out is not None}
    resp = httpx.post(url.rstrip("/") + "/predict", json=body, timeout=60.0)
    if resp.status_code != 200:
        raise click.ClickException(f"{resp.status_code}: {resp.text}")
    preds = resp.json()["predictions"]
    z = np.array([p["latent"] for p in preds])
    if out:
        formats.write_latents_csv(z, out)
    else:
        for row in z:
            click.echo(",".join(f"{v:.6g}" for v in row))
    if field_out:
        values = np.array(preds[0]["field"])
        formats.write_scan(wakegen.ScanGrid(values, np.ones(values.shape, bool)), field_out)


if __name__ == "__main__":
    main()
