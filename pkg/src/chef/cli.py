"""Command-line entry points: batch runs with simulated annotators, synthetic
dataset generation, the annotation service, and report summaries.

Exit codes: 0 success, 2 configuration error, 3 runtime error. Logs go to
stderr (level from the CHEF_LOG environment variable); artifacts go to the
output directory.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import sys
from pathlib import Path

import click

from .dataio import load_dataset, make_blobs_dataset, simulate_annotators, \
    synth_probabilistic_labels, write_dataset
from .errors import ChefError, ConfigError
from .influence import export_influence_csv
from .model import TrainConfig
from .numerics import SolverConfig
from .deltagrad import DeltaGradConfig
from .pipeline import AnnotatorSetup, PipelineConfig, PipelineSession
from .rng import derive_seed

log = logging.getLogger("chef")


def _setup_logging():
    level = os.environ.get("CHEF_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _strict(section: dict, known: set, where: str) -> dict:
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return section


def parse_config_file(path, seed_override: int | None = None,
                      out_override=None) -> tuple[PipelineConfig, Path, Path]:
    """Strictly parse the run config JSON: unknown keys are rejected, all
    sub-seeds are derived from the single top-level seed."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc

    known = {"dataset", "out", "seed", "budget", "batch", "strategy", "updater",
             "selector", "use_increm", "gamma", "early_stop_f1",
             "tie_consumes_budget", "train", "delta", "solver", "annotators"}
    _strict(raw, known, "config")
    for required in ("dataset", "budget", "batch", "train"):
        if required not in raw:
            raise ConfigError(f"config is missing {required!r}")

    manifest = (path.parent / raw["dataset"]).resolve()
    if not manifest.exists():
        raise ConfigError(f"dataset manifest not found: {manifest}")
    out_dir = Path(out_override) if out_override else path.parent / raw.get("out", ".")
    seed = int(seed_override if seed_override is not None else raw.get("seed", 0))
    gamma = float(raw.get("gamma", 0.8))

    tr = _strict(dict(raw["train"]), {"learning_rate", "lam", "epochs", "batch_size"},
                 "train")
    try:
        train = TrainConfig(
            learning_rate=float(tr["learning_rate"]), lam=float(tr["lam"]),
            epochs=int(tr["epochs"]), batch_size=int(tr["batch_size"]),
            gamma=gamma, seed=derive_seed(seed, "train"),
        )
    except KeyError as exc:
        raise ConfigError(f"train config is missing {exc}") from exc

    dl = _strict(dict(raw.get("delta", {})), {"m0", "j0", "t0"}, "delta")
    delta = DeltaGradConfig(**{k: int(v) for k, v in dl.items()})

    sv = _strict(dict(raw.get("solver", {})),
                 {"cg_tol", "cg_max_iter", "cg_damping", "power_tol", "power_max_iter"},
                 "solver")
    solver = SolverConfig(power_seed=derive_seed(seed, "power"),
                          **{k: (int(v) if "iter" in k else float(v))
                             for k, v in sv.items()})

    an = _strict(dict(raw.get("annotators", {})), {"kind", "k", "error_rate"},
                 "annotators")
    annotators = AnnotatorSetup(
        kind=an.get("kind", "simulated"), k=int(an.get("k", 3)),
        error_rate=float(an.get("error_rate", 0.05)),
    )
    if annotators.kind not in ("simulated", "service"):
        raise ConfigError(f"unknown annotators kind {annotators.kind!r}")

    early = raw.get("early_stop_f1")
    config = PipelineConfig(
        budget=int(raw["budget"]), batch=int(raw["batch"]),
        strategy=raw.get("strategy", "two"), updater=raw.get("updater", "retrain"),
        selector=raw.get("selector", "infl"), use_increm=bool(raw.get("use_increm", False)),
        gamma=gamma, train=train, delta=delta, solver=solver, annotators=annotators,
        early_stop_f1=None if early is None else float(early),
        tie_consumes_budget=bool(raw.get("tie_consumes_budget", True)),
        seed=seed,
    )
    return config, manifest, out_dir


def run_from_config(config: PipelineConfig, manifest: Path, out_dir: Path) -> dict:
    dataset = load_dataset(manifest)
    out_dir.mkdir(parents=True, exist_ok=True)

    def sink(k, table):
        export_influence_csv(table, out_dir / f"influence_round_{k}.csv")

    session = PipelineSession(dataset, config,
                              table_sink=sink if config.selector == "infl" else None)
    session.initialize()
    while not session.done:
        session.advance()
        log.info("round %d done, f1_val=%.4f", session.k - 1,
                 session.metrics[-1]["f1_val"])
    report = session.report()
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


@click.group()
def main():
    """Iterative probabilistic-label cleaning."""
    _setup_logging()


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--out", "out_dir", type=click.Path(), default=None)
def run(config_path, seed, out_dir):
    """Run the cleaning pipeline with simulated annotators."""
    try:
        config, manifest, out = parse_config_file(config_path, seed, out_dir)
        if config.annotators.kind != "simulated":
            raise ConfigError("'chef run' requires simulated annotators; "
                              "use 'chef serve' for the annotation service")
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    try:
        report = run_from_config(config, manifest, out)
    except ChefError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    final = report["rounds"][-1]["f1_val"] if report["rounds"] else report["initial"]["f1_val"]
    click.echo(f"cleaned {report['total_cleaned']} samples over "
               f"{len(report['rounds'])} rounds; final f1_val={final:.4f}")


@main.command()
@click.option("--n", default=200, type=int)
@click.option("--d", default=10, type=int)
@click.option("--c", "num_classes", default=2, type=int)
@click.option("--noise-fraction", default=0.3, type=float,
              help="fraction of training labels replaced by random probability vectors")
@click.option("--flip-rate", default=0.05, type=float,
              help="simulated annotator error rate")
@click.option("--annotator-count", default=3, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, type=int)
def synth(n, d, num_classes, noise_fraction, flip_rate, annotator_count, out_dir, seed):
    """Generate a Gaussian-blob dataset with probabilistic training labels."""
    if n < 10:
        click.echo("config error: --n must be >= 10", err=True)
        sys.exit(2)
    try:
        dataset = make_blobs_dataset(n, d, num_classes, seed=seed)
        if noise_fraction > 0:
            dataset = synth_probabilistic_labels(dataset, noise_fraction,
                                                 derive_seed(seed, "noise"))
        out = Path(out_dir)
        manifest = write_dataset(out, dataset)
        pool = simulate_annotators(dataset, annotator_count, flip_rate,
                                   derive_seed(seed, "annotators"))
        (out / "annotators.json").write_text(json.dumps({
            "error_rate": pool.error_rate,
            "seed": pool.seed,
            "labels": [{str(i): c + 1 for i, c in ann.items()}
                       for ann in pool.annotators],
        }, indent=2, sort_keys=True))
    except (OSError, ChefError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    click.echo(str(manifest))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--bind", default="127.0.0.1:8400", help="host:port to serve on")
@click.option("--seed", type=int, default=None)
def serve(config_path, bind, seed):
    """Serve the human-annotation HTTP API for one pipeline session."""
    try:
        config, manifest, _ = parse_config_file(config_path, seed, None)
        host, _, port_text = bind.partition(":")
        port = int(port_text or "8400")
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError as exc:
        click.echo(f"error: cannot bind {bind}: {exc}", err=True)
        sys.exit(3)
    finally:
        probe.close()

    from .service import create_app

    dataset = load_dataset(manifest)
    ui_dir = os.environ.get("CHEF_UI_DIST", "frontend/dist")
    app = create_app(dataset, config, ui_dir=ui_dir if Path(ui_dir).is_dir() else None)
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("report")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="directory holding report.json (defaults to the config's out)")
def report_cmd(config_path, out_dir):
    """Summarize a previous run's report.json."""
    try:
        if out_dir is None:
            if config_path is None:
                raise ConfigError("pass --config or --out to locate report.json")
            _, _, out = parse_config_file(config_path)
            out_dir = out
        report_path = Path(out_dir) / "report.json"
        if not report_path.exists():
            raise ConfigError(f"no report at {report_path}")
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    data = json.loads(report_path.read_text())
    click.echo(f"seed {data['seed']}; initial f1_val={data['initial']['f1_val']:.4f} "
               f"f1_test={data['initial']['f1_test']:.4f}")
    for rnd in data["rounds"]:
        click.echo(
            f"round {rnd['k']}: cleaned {len(rnd['applied'])} "
            f"(ties {len(rnd['ties'])}), f1_val={rnd['f1_val']:.4f} "
            f"f1_test={rnd['f1_test']:.4f}, "
            f"influence_grad_evals={rnd['grad_evals']['influence']}"
        )
    click.echo(f"total cleaned: {data['total_cleaned']} "
               f"(budget spent {data['budget_spent']})")


if __name__ == "__main__":
    main()
