"""Command-line surface: encode, train, predict, evaluate, cv, synth, exports.

Every run derives all randomness from --seed and writes a manifest next to
its outputs, so identical invocations reproduce identical files (manifest
timestamps aside).
"""

from __future__ import annotations

from pathlib import Path

import click

from . import __version__
from .datasets import (
    DataFormatError,
    Dataset,
    SynthSpec,
    Vocabulary,
    align_qmatrix,
    convert_assistments,
    generate_synthetic,
    load_dataset,
    load_triplets,
    write_synthetic,
)
from .encoding import EncodingError, encode_dataset, load_qmatrix
from .evaluation import (
    FoldSpec,
    evaluate_predictions,
    format_table,
    run_cv,
    write_fold_report,
    write_summary,
)
from .model import Link, export_embeddings, predict_proba_matrix, preset_encoding
from .persistence import (
    ModelBundle,
    ModelFormatError,
    load_model,
    save_model,
    write_manifest,
)
from .sparse import LayoutError, RowFormatError
from .training import (
    TrainConfig,
    TrainingDivergedError,
    train_gibbs_probit,
    train_map_logit,
)

_ERRORS = (
    DataFormatError,
    EncodingError,
    LayoutError,
    RowFormatError,
    ModelFormatError,
    TrainingDivergedError,
    ValueError,
    OSError,
)


def _fail(exc: Exception) -> "click.ClickException":
    return click.ClickException(str(exc))


def _load(data, qmatrix, vocab) -> Dataset:
    try:
        return load_dataset(data, qmatrix, vocab)
    except _ERRORS as exc:
        raise _fail(exc)


def _write_predictions(path, probabilities) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("row,proba\n")
        for r, p in enumerate(probabilities):
            fh.write(f"{r},{float(p)!r}\n")


def _write_epoch_log(path, log_rows) -> None:
    if not log_rows:
        return
    keys = ["epoch", "train_nll"] + [
        k for k in ("test_acc", "test_auc", "test_nll") if k in log_rows[0]
    ]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(keys) + "\n")
        for row in log_rows:
            fh.write(",".join(repr(float(row[k])) if k != "epoch" else str(row[k]) for k in keys) + "\n")


@click.group()
@click.version_option(__version__, prog_name="ktfm")
def main():
    """Student performance prediction with sparse factorization machines."""


data_opt = click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
qmatrix_opt = click.option("--qmatrix", type=click.Path(exists=True, dir_okay=False))
vocab_opt = click.option("--vocab", type=click.Path(exists=True, dir_okay=False))
seed_opt = click.option("--seed", default=0, show_default=True)
preset_opt = click.option("--preset", default="irt", show_default=True)
d_opt = click.option("--d", "dim", default=0, show_default=True, help="Factor dimension.")
link_opt = click.option(
    "--link",
    type=click.Choice(["logit", "probit"]),
    default="logit",
    show_default=True,
    help="logit trains by MAP gradient descent, probit by Gibbs sampling.",
)
epochs_opt = click.option("--epochs", "--iters", "epochs", default=200, show_default=True)


@main.command()
@data_opt
@qmatrix_opt
@vocab_opt
@preset_opt
@d_opt
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--vocab-out", type=click.Path(dir_okay=False))
def encode(data, qmatrix, vocab, preset, dim, out, vocab_out):
    """Encode a triplet log into a sparse design-matrix text file."""
    dataset = _load(data, qmatrix, vocab)
    try:
        config, rule = preset_encoding(preset, dataset.extra_columns)
        rule.check(dim)
        dm = encode_dataset(
            dataset.triplets,
            dataset.qmatrix,
            config,
            dataset.n_students,
            extras=dataset.extras,
            n_items=dataset.n_items,
        )
        dm.save(out)
        if vocab_out:
            dataset.vocab.save(vocab_out)
    except _ERRORS as exc:
        raise _fail(exc)
    write_manifest(
        Path(out).with_suffix(".manifest.json"),
        "encode",
        {"preset": preset, "d": dim},
        {"data": data, "qmatrix": qmatrix or "", "vocab": vocab or ""},
    )
    click.echo(f"wrote {out} ({len(dm)} rows x {dm.space.width} features)")


def _train_config(dim, epochs, lr, l2, seed, burn_in=None) -> TrainConfig:
    return TrainConfig(
        d=dim,
        epochs=epochs,
        learning_rate=lr,
        l2=l2,
        seed=seed,
        burn_in=burn_in,
    )


@main.command()
@data_opt
@qmatrix_opt
@vocab_opt
@preset_opt
@d_opt
@link_opt
@epochs_opt
@click.option("--lr", default=0.01, show_default=True)
@click.option("--l2", default=0.0, show_default=True)
@click.option("--burn-in", type=int, default=None, help="Gibbs burn-in (default 20%).")
@seed_opt
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--vocab-out", type=click.Path(dir_okay=False))
@click.option("--log", "log_path", type=click.Path(dir_okay=False), help="Per-epoch metrics CSV.")
def train(data, qmatrix, vocab, preset, dim, link, epochs, lr, l2, burn_in, seed, out, vocab_out, log_path):
    """Fit a model on a full log and save it as versioned JSON."""
    dataset = _load(data, qmatrix, vocab)
    try:
        config, rule = preset_encoding(preset, dataset.extra_columns)
        rule.check(dim)
        dm = encode_dataset(
            dataset.triplets,
            dataset.qmatrix,
            config,
            dataset.n_students,
            extras=dataset.extras,
            n_items=dataset.n_items,
        )
        cfg = _train_config(dim, epochs, lr, l2, seed, burn_in)
        epoch_log: list | None = [] if log_path else None
        if Link(link) is Link.PROBIT:
            params = train_gibbs_probit(dm, None, cfg, epoch_log=epoch_log).params
        else:
            params = train_map_logit(dm, cfg, epoch_log=epoch_log)
    except _ERRORS as exc:
        raise _fail(exc)
    bundle = ModelBundle(
        params=params,
        space=dm.space,
        link=Link(link),
        encoding=config,
        vocab_digest=dataset.vocab.digest(),
        n_students=dataset.n_students,
        n_items=dataset.n_items,
    )
    save_model(out, bundle)
    if vocab_out:
        dataset.vocab.save(vocab_out)
    if log_path:
        _write_epoch_log(log_path, epoch_log)
    write_manifest(
        Path(out).with_suffix(".manifest.json"),
        "train",
        {"preset": preset, "d": dim, "link": link, "epochs": epochs, "lr": lr, "l2": l2, "seed": seed},
        {"data": data, "qmatrix": qmatrix or "", "vocab": vocab or ""},
    )
    click.echo(f"wrote {out}")


def _encode_for_model(bundle: ModelBundle, data, qmatrix, vocab_path):
    vocab = Vocabulary.load(vocab_path)
    if vocab.digest() != bundle.vocab_digest:
        raise ModelFormatError(
            "vocabulary digest mismatch: this vocabulary is not the one the "
            "model was trained with"
        )
    triplets, extras, _ = load_triplets(data, vocab, allow_unknown=True)
    q = None
    if qmatrix:
        q = align_qmatrix(load_qmatrix(qmatrix), vocab.items, vocab_order=True)
    elif bundle.encoding.needs_skills:
        raise EncodingError("this model needs a q-matrix to encode data")
    return encode_dataset(
        triplets,
        q,
        bundle.encoding,
        bundle.n_students,
        extras=extras,
        n_items=bundle.n_items,
    )


model_opt = click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
vocab_req_opt = click.option("--vocab", required=True, type=click.Path(exists=True, dir_okay=False))


@main.command()
@model_opt
@data_opt
@qmatrix_opt
@vocab_req_opt
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def predict(model, data, qmatrix, vocab, out):
    """Score a triplet log with a saved model; one probability per row."""
    try:
        bundle = load_model(model)
        dm = _encode_for_model(bundle, data, qmatrix, vocab)
        probabilities = predict_proba_matrix(bundle.params, dm, bundle.link)
    except _ERRORS as exc:
        raise _fail(exc)
    _write_predictions(out, probabilities)
    write_manifest(
        Path(out).with_suffix(".manifest.json"),
        "predict",
        {},
        {"model": model, "data": data, "qmatrix": qmatrix or "", "vocab": vocab},
    )
    click.echo(f"wrote {out} ({len(probabilities)} predictions)")


@main.command()
@model_opt
@data_opt
@qmatrix_opt
@vocab_req_opt
@click.option("--out", type=click.Path(dir_okay=False))
def evaluate(model, data, qmatrix, vocab, out):
    """ACC/AUC/NLL of a saved model on a labeled triplet log."""
    try:
        bundle = load_model(model)
        dm = _encode_for_model(bundle, data, qmatrix, vocab)
        probabilities = predict_proba_matrix(bundle.params, dm, bundle.link)
        metrics = evaluate_predictions(probabilities, dm.labels, fold=0)
    except _ERRORS as exc:
        raise _fail(exc)
    auc_txt = "" if metrics.auc is None else repr(metrics.auc)
    if out:
        with open(out, "w", newline="\n") as fh:
            fh.write("acc,auc,nll\n")
            fh.write(f"{metrics.acc!r},{auc_txt},{metrics.nll!r}\n")
    click.echo(f"acc={metrics.acc:.4f} auc={auc_txt or 'n/a'} nll={metrics.nll:.4f}")


@main.command()
@data_opt
@qmatrix_opt
@vocab_opt
@click.option(
    "--preset",
    "presets",
    multiple=True,
    default=("irt",),
    show_default=True,
    help="Repeatable; grid cells pair each preset with each --d.",
)
@click.option("--d", "dims", multiple=True, type=int, default=(0,), show_default=True)
@link_opt
@epochs_opt
@click.option("--lr", default=0.01, show_default=True)
@click.option("--l2", default=0.0, show_default=True)
@click.option("--folds", default=5, show_default=True)
@click.option("--split", type=click.Choice(["row", "student"]), default="row", show_default=True)
@seed_opt
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def cv(data, qmatrix, vocab, presets, dims, link, epochs, lr, l2, folds, split, seed, out_dir):
    """Cross-validate a preset/dimension grid and write report CSVs."""
    dataset = _load(data, qmatrix, vocab)
    grid = []
    for p in presets:
        for d in dims:
            try:
                _, rule = preset_encoding(p, dataset.extra_columns)
                rule.check(d)
            except ValueError as exc:
                if len(presets) * len(dims) == 1:
                    raise _fail(exc)
                click.echo(f"skipping {p} at d={d}: {exc}", err=True)
                continue
            grid.append((p, d))
    if not grid:
        raise click.ClickException("no valid (preset, d) grid cells")
    try:
        reports = run_cv(
            dataset,
            grid,
            FoldSpec(k=folds, seed=seed, mode=f"by_{split}"),
            _train_config(0, epochs, lr, l2, seed),
            Link(link),
        )
    except _ERRORS as exc:
        raise _fail(exc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="\n") as fh:
        write_fold_report(reports, fh)
    with open(out / "summary.csv", "w", newline="\n") as fh:
        write_summary(reports, fh)
    write_manifest(
        out / "manifest.json",
        "cv",
        {
            "presets": list(presets),
            "dims": list(dims),
            "link": link,
            "epochs": epochs,
            "lr": lr,
            "l2": l2,
            "folds": folds,
            "split": split,
            "seed": seed,
        },
        {"data": data, "qmatrix": qmatrix or "", "vocab": vocab or ""},
    )
    click.echo(format_table(reports))


@main.command("export-embeddings")
@model_opt
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def export_embeddings_cmd(model, out):
    """Dump per-feature biases and factor vectors as CSV."""
    try:
        bundle = load_model(model)
        with open(out, "w", newline="\n") as fh:
            export_embeddings(bundle.params, bundle.space, fh)
    except _ERRORS as exc:
        raise _fail(exc)
    click.echo(f"wrote {out}")


@main.command()
@click.option(
    "--generator",
    type=click.Choice(["rasch", "mirt", "pfa", "ktm"]),
    default="rasch",
    show_default=True,
)
@click.option("--students", default=100, show_default=True)
@click.option("--items", default=20, show_default=True)
@click.option("--skills", default=0, show_default=True)
@click.option("--d", "dim", default=0, show_default=True)
@click.option("--attempts", default=1, show_default=True)
@click.option("--link", type=click.Choice(["logit", "probit"]), default="logit", show_default=True)
@click.option("--scale", default=1.0, show_default=True)
@seed_opt
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def synth(generator, students, items, skills, dim, attempts, link, scale, seed, out_dir):
    """Generate a synthetic log with saved ground-truth parameters."""
    try:
        spec = SynthSpec(
            generator=generator,
            n_students=students,
            n_items=items,
            n_skills=skills,
            d=dim,
            attempts=attempts,
            link=Link(link),
            seed=seed,
            scale=scale,
        )
        paths = write_synthetic(generate_synthetic(spec), out_dir)
    except _ERRORS as exc:
        raise _fail(exc)
    write_manifest(
        Path(out_dir) / "manifest.json",
        "synth",
        {
            "generator": generator,
            "students": students,
            "items": items,
            "skills": skills,
            "d": dim,
            "attempts": attempts,
            "link": link,
            "scale": scale,
            "seed": seed,
        },
        {},
    )
    click.echo("wrote " + ", ".join(sorted(paths.values())))


@main.command("import-assistments")
@click.option("--raw", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-data", required=True, type=click.Path(dir_okay=False))
@click.option("--out-qmatrix", required=True, type=click.Path(dir_okay=False))
def import_assistments(raw, out_data, out_qmatrix):
    """Convert the public 2009-2010 skill-builder CSV to the triplet format."""
    try:
        convert_assistments(raw, out_data, out_qmatrix)
    except _ERRORS as exc:
        raise _fail(exc)
    click.echo(f"wrote {out_data} and {out_qmatrix}")


if __name__ == "__main__":
    main()
