"""The `medrec` command.

Subcommands: generate, train, eval, ablate, ddi-check, serve. Settings merge
a JSON config file (sections: data, model, train, serve) with flags, flags
winning. Every output artifact embeds the effective config and tool version.

Exit codes: 0 success, 1 domain finding (an interaction was found, training
diverged), 2 usage or bad input files, 3 internal error.
"""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import __version__
from .ddigraph import (
    EhrGraph,
    build_ddi_graph,
    build_ehr_graph,
    check_interactions,
    generate_synthetic_ddi,
    load_ddi_tsv,
    save_ddi_tsv,
)
from .ehrdata import (
    DatasetFormatError,
    InfeasibleConfigError,
    UnknownCodeError,
    config_from_dict as generator_config_from_dict,
    dataset_moments,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .model import (
    CheckpointError,
    GraphInputs,
    VARIANTS,
    config_from_dict as model_config_from_dict,
    load_checkpoint,
    save_checkpoint,
)
from .report import collect_runs, format_table, render_ablation_chart, \
    render_training_curves, summarize, write_csv
from .traineval import (
    TrainingDivergedError,
    evaluate,
    train,
    train_config_from_dict,
)

CONFIG_SECTIONS = ("data", "model", "train", "serve")
EXIT_FINDING = 1
EXIT_INTERNAL = 3


class RunSettings:
    def __init__(self, sections: dict, seed: int | None, quiet: bool):
        self.sections = sections
        self.seed = seed
        self.quiet = quiet

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))

    def echo(self, msg: str) -> None:
        if not self.quiet:
            click.echo(msg)


def load_settings(config_path, seed, quiet) -> RunSettings:
    sections: dict = {}
    if config_path:
        with open(config_path) as fh:
            try:
                sections = json.load(fh)
            except json.JSONDecodeError as exc:
                raise click.UsageError(f"config file is not valid JSON: {exc.msg}")
        if not isinstance(sections, dict):
            raise click.UsageError("config file must hold a JSON object")
        unknown = set(sections) - set(CONFIG_SECTIONS)
        if unknown:
            raise click.UsageError(f"unknown config sections: {sorted(unknown)}")
    return RunSettings(sections, seed, quiet)


def guarded(fn):
    """Map library errors onto the exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except TrainingDivergedError as exc:
            exc2 = click.ClickException(str(exc))
            exc2.exit_code = EXIT_FINDING
            raise exc2 from exc
        except (DatasetFormatError, UnknownCodeError, CheckpointError,
                InfeasibleConfigError, ValueError, OSError) as exc:
            raise click.UsageError(str(exc)) from exc
        except Exception as exc:  # pragma: no cover - defensive
            exc2 = click.ClickException(f"internal error: {exc}")
            exc2.exit_code = EXIT_INTERNAL
            raise exc2 from exc

    return wrapper


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


@click.group()
@click.version_option(version=__version__, prog_name="medrec")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON config with data/model/train/serve sections.")
@click.option("--seed", type=int, default=None, help="Default seed for subcommands.")
@click.option("--quiet", is_flag=True, help="Suppress progress output.")
@click.pass_context
def cli(ctx, config_path, seed, quiet):
    """DDI-aware medication recommendation toolkit."""
    ctx.obj = load_settings(config_path, seed, quiet)


def _resolve_seed(settings: RunSettings, flag_seed, section: dict, default=0) -> int:
    if flag_seed is not None:
        return flag_seed
    if settings.seed is not None:
        return settings.seed
    return int(section.get("seed", default))


# ------------------------------------------------------------------- generate

@cli.command()
@click.option("--patients", type=int, default=None, help="Cohort size (default 6350).")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--ddi-out", type=click.Path(dir_okay=False), default=None,
              help="Also write a synthetic interaction TSV over the med vocab.")
@click.option("--ddi-types", type=int, default=120, show_default=True)
@click.option("--ddi-pairs-per-type", type=int, default=4, show_default=True)
@click.pass_obj
@guarded
def generate(settings, patients, seed, out, ddi_out, ddi_types, ddi_pairs_per_type):
    """Write a synthetic JSON-Lines dataset calibrated to the cohort moments."""
    section = settings.section("data")
    section.pop("ddi_top_k", None)
    cfg = generator_config_from_dict(section)
    overrides = {}
    if patients is not None:
        overrides["n_patients"] = patients
    overrides["seed"] = _resolve_seed(settings, seed, section, default=cfg.seed)
    cfg = generator_config_from_dict({**section, **overrides})
    records, vocabs = generate_synthetic(cfg)
    meta = {"tool_version": __version__, "config": asdict(cfg)}
    save_dataset(out, records, vocabs, meta=meta)
    moments = dataset_moments(records)
    settings.echo(f"wrote {len(records)} patients to {out}")
    settings.echo("  " + "  ".join(f"{k}={v:.2f}" for k, v in moments.items()))
    if ddi_out:
        ddi_records = generate_synthetic_ddi(vocabs.medication, n_types=ddi_types,
                                             pairs_per_type=ddi_pairs_per_type,
                                             seed=cfg.seed)
        save_ddi_tsv(ddi_out, ddi_records)
        settings.echo(f"wrote {len(ddi_records)} interaction records to {ddi_out}")


# ---------------------------------------------------------------------- train

def _artifact_paths(ckpt_path: Path) -> dict[str, Path]:
    stem = ckpt_path.with_suffix("")
    return {"metrics": stem.with_suffix(".metrics.json"),
            "history": stem.with_suffix(".history.csv"),
            "curves": stem.with_suffix(".curves.png")}


@cli.command("train")
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--ddi", "ddi_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--variant", type=click.Choice(VARIANTS), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True,
              help="Checkpoint path; metrics/history/curves written alongside.")
@click.pass_obj
@guarded
def train_cmd(settings, data_path, ddi_path, variant, seed, out_path):
    """Train a model and report test metrics."""
    train_section = settings.section("train")
    train_section["seed"] = _resolve_seed(settings, seed, train_section)
    if variant is not None:
        train_section["variant"] = variant
    tc = train_config_from_dict(train_section)
    mc = model_config_from_dict(settings.section("model"))
    data_section = settings.section("data")
    top_k = int(data_section.get("ddi_top_k", 90))

    records, vocabs, report, _ = load_dataset(data_path)
    if report.n_violations:
        settings.echo(f"loader skipped {len(report.visits_rejected)} visits, "
                      f"{len(report.patients_rejected)} patients")
    train_r, val_r, test_r = split_dataset(records, seed=tc.seed)
    ddi_graph = build_ddi_graph(load_ddi_tsv(ddi_path), vocabs.medication, top_k=top_k)
    ehr_graph = build_ehr_graph(train_r, vocabs.medication)

    result = train(mc, tc, train_r, val_r, vocabs, ehr_graph, ddi_graph,
                   log=None if settings.quiet else click.echo)
    graphs = GraphInputs.build(ehr_graph, ddi_graph)
    metrics = evaluate(result.params, test_r, graphs, ddi_graph)

    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    ehr_pairs = [[int(i), int(j)] for i, j in
                 np.argwhere(np.triu(ehr_graph.adjacency, 1)).tolist()]
    save_checkpoint(out, result.params, vocabs,
                    extra={"ehr_adjacency": ehr_pairs, "ddi_top_k": top_k,
                           "train_config": asdict(tc),
                           "best_epoch": result.best_epoch,
                           "tool_version": __version__})
    effective = {"data_path": str(data_path), "ddi_path": str(ddi_path),
                 "ddi_top_k": top_k, "model": asdict(mc), "train": asdict(tc)}
    paths = _artifact_paths(out)
    paths["metrics"].write_text(_dump_json(
        {**metrics.to_dict(), "variant": tc.variant, "seed": tc.seed,
         "split": "test", "best_epoch": result.best_epoch,
         "config": effective, "tool_version": __version__}))
    with open(paths["history"], "w") as fh:
        fh.write(f"# config={json.dumps(effective, sort_keys=True)} "
                 f"tool_version={__version__}\n")
        fh.write("epoch,train_loss,train_bce,val_jaccard\n")
        for h in result.history:
            fh.write(f"{h.epoch},{h.train_loss!r},{h.train_bce!r},{h.val_jaccard!r}\n")
    render_training_curves(result.history, paths["curves"])
    settings.echo(f"checkpoint: {out} (best epoch {result.best_epoch})")
    settings.echo(f"test metrics: {json.dumps(metrics.to_dict(), sort_keys=True)}")


# ----------------------------------------------------------------------- eval

@cli.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--ddi", "ddi_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--split", type=click.Choice(["train", "val", "test", "all"]),
              default="test", show_default=True)
@click.option("--seed", type=int, default=None,
              help="Split seed; must match the training run for the same split.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
@guarded
def eval_cmd(settings, checkpoint, data_path, ddi_path, split, seed, out_path):
    """Evaluate a checkpoint on one split of a dataset."""
    records, vocabs, _, _ = load_dataset(data_path)
    params, _, manifest = load_checkpoint(
        checkpoint, expect_vocab_hashes=vocabs.hashes())
    seed = _resolve_seed(settings, seed, settings.section("train"))
    if split == "all":
        chosen = records
    else:
        train_r, val_r, test_r = split_dataset(records, seed=seed)
        chosen = {"train": train_r, "val": val_r, "test": test_r}[split]
    extra = manifest.get("extra", {})
    top_k = int(extra.get("ddi_top_k", 90))
    ddi_graph = build_ddi_graph(load_ddi_tsv(ddi_path), vocabs.medication, top_k=top_k)
    n_rx = len(vocabs.medication)
    ehr_adj = np.zeros((n_rx, n_rx), dtype=np.uint8)
    for i, j in extra.get("ehr_adjacency", []):
        ehr_adj[i, j] = ehr_adj[j, i] = 1
    graphs = GraphInputs.build(EhrGraph(vocab=vocabs.medication, adjacency=ehr_adj),
                               ddi_graph)
    metrics = evaluate(params, chosen, graphs, ddi_graph)
    payload = _dump_json({**metrics.to_dict(), "split": split, "seed": seed,
                          "variant": params.config.variant,
                          "config": {"checkpoint": str(checkpoint),
                                     "data_path": str(data_path),
                                     "ddi_path": str(ddi_path)},
                          "tool_version": __version__})
    if out_path:
        Path(out_path).write_text(payload)
        settings.echo(f"wrote {out_path}")
    else:
        click.echo(payload, nl=False)


# --------------------------------------------------------------------- ablate

@cli.command()
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--out-dir", type=click.Path(file_okay=False), default=".",
              show_default=True)
@click.pass_obj
@guarded
def ablate(settings, run_dirs, out_dir):
    """Summarize variant runs into a table, CSV, and bar charts."""
    runs = collect_runs(run_dirs)
    rows = summarize(runs)
    table = format_table(rows)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.txt").write_text(table + "\n")
    write_csv(rows, out / "ablation.csv")
    render_ablation_chart(rows, out / "ablation.png")
    click.echo(table)
    settings.echo(f"wrote {out / 'ablation.txt'}, {out / 'ablation.csv'}, "
                  f"{out / 'ablation.png'}")


# ------------------------------------------------------------------ ddi-check

@cli.command("ddi-check")
@click.argument("drug_a")
@click.argument("drug_b")
@click.option("--ddi", "ddi_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--top-k", type=int, default=90, show_default=True)
@click.pass_context
@guarded
def ddi_check(ctx, drug_a, drug_b, ddi_path, top_k):
    """Check one drug pair; exits 1 when an interaction is found."""
    from .ehrdata import CodeVocab
    records = load_ddi_tsv(ddi_path)
    codes = sorted({r.atc3_a for r in records} | {r.atc3_b for r in records}
                   | {drug_a, drug_b})
    graph = build_ddi_graph(records, CodeVocab.from_codes("medication", codes),
                            top_k=top_k)
    pairs, _ = check_interactions([drug_a, drug_b], graph)
    if pairs:
        p = pairs[0]
        click.echo(f"INTERACTION: {p.drug_a} {p.drug_b} ({p.interaction_type}, "
                   f"severity {p.severity:g})")
        ctx.exit(EXIT_FINDING)
    click.echo(f"OK: no recorded interaction between {drug_a} and {drug_b}")


# ----------------------------------------------------------------------- serve

@cli.command()
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--ddi", "ddi_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--topk", type=int, default=None,
              help="Max recommendations per response (default 10).")
@click.option("--filter-ddi", is_flag=True, default=None,
              help="Drop recommendations that conflict with current medications.")
@click.pass_obj
@guarded
def serve(settings, checkpoint, ddi_path, host, port, topk, filter_ddi):
    """Start the HTTP inference service."""
    import uvicorn

    from .serveapi import ServeSettings, ServiceState, create_app

    section = settings.section("serve")
    serve_settings = ServeSettings(
        topk=topk if topk is not None else int(section.get("topk", 10)),
        filter_ddi=filter_ddi if filter_ddi is not None
            else bool(section.get("filter_ddi", False)),
    )
    state = ServiceState.load(checkpoint, ddi_path, serve_settings)
    settings.echo(f"model {state.model_version} loaded; serving on {host}:{port}")
    uvicorn.run(create_app(state), host=host, port=port,
                log_level="warning" if settings.quiet else "info")


def main() -> None:
    try:
        cli.main(standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(130)
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


if __name__ == "__main__":
    main()
