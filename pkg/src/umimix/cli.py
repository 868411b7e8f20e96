"""Command-line interface: fit, simulate, evaluate, select-k, diagnose.

Every run writes a metadata.json sufficient to replay it (subcommand, full
configuration, seed, package version).  Report-style subcommands also render
PNG figures next to their delimited outputs unless --no-figures is given.
Failures exit non-zero with a message naming the failing stage: 3 for I/O,
4 for invalid data or configuration, 5 for fitting failures.
"""

from __future__ import annotations

import dataclasses
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np

from . import __version__
from .countmatrix import (
    SparseCountMatrix,
    filter_cells_and_genes,
    load_dense_tsv,
    load_sparse_matrix,
    select_top_variable_genes,
    write_matrix_market,
)
from .diagnostics import beta_marginal_table, mean_variance_regression
from .em import FitConfig, fit_multi_restart
from .errors import FitError, UmimixError, ValidationError
from .initialize import InitStrategy, proportion_moments, ronning_alpha
from .metrics import adjusted_rand_index, vague_cells
from .output import (
    align_labels,
    fit_metadata,
    read_labels_tsv,
    read_posterior_tsv,
    write_fit_outputs,
    write_labels_tsv,
    write_run_metadata,
    write_selection_table,
)
from .selection import select_k
from .simulate import SCENARIO_AXES, build_spec, make_scenario, simulate

logger = logging.getLogger("umimix")

EXIT_IO = 3
EXIT_DATA = 4
EXIT_FIT = 5


class StageFailure(Exception):
    def __init__(self, stage_name: str, cause: Exception):
        super().__init__(f"{stage_name}: {cause}")
        self.stage_name = stage_name
        self.cause = cause
        if isinstance(cause, OSError):
            self.code = EXIT_IO
        elif isinstance(cause, FitError):
            self.code = EXIT_FIT
        else:
            self.code = EXIT_DATA


@contextmanager
def stage(name: str):
    try:
        yield
    except StageFailure:
        raise
    except (UmimixError, OSError) as exc:
        raise StageFailure(name, exc) from exc


def _run(body) -> None:
    try:
        body()
    except StageFailure as failure:
        click.echo(f"error [{failure.stage_name}]: {failure.cause}", err=True)
        sys.exit(failure.code)


def _configure_logging(verbose: int) -> None:
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@click.group()
@click.version_option(version=__version__, prog_name="umimix")
@click.option("-v", "--verbose", count=True, help="Increase log verbosity (-v, -vv).")
def cli(verbose: int) -> None:
    """Cluster sparse UMI count matrices with a Dirichlet-multinomial mixture."""
    _configure_logging(verbose)


def matrix_input_options(f):
    f = click.option("--matrix", "matrix_path", type=click.Path(), default=None,
                     help="MatrixMarket coordinate integer file (genes x cells).")(f)
    f = click.option("--genes", "genes_path", type=click.Path(), default=None,
                     help="Gene ID file, one per line (first tab field).")(f)
    f = click.option("--barcodes", "barcodes_path", type=click.Path(), default=None,
                     help="Cell barcode file, one per line (first tab field).")(f)
    f = click.option("--dense", "dense_path", type=click.Path(), default=None,
                     help="Dense TSV (gene rows, cell columns) instead of --matrix.")(f)
    f = click.option("--min-genes-per-cell", default=300, show_default=True,
                     help="Drop cells expressing fewer genes.")(f)
    f = click.option("--min-cells-per-gene", default=5, show_default=True,
                     help="Drop genes expressed in fewer retained cells.")(f)
    f = click.option("--top-genes", default=1000, show_default=True,
                     help="Keep this many most-variable genes (0 disables).")(f)
    return f


def fit_config_options(f):
    f = click.option("--restarts", default=10, show_default=True,
                     help="Independent EM restarts; the best likelihood wins.")(f)
    f = click.option("--max-iter", default=200, show_default=True)(f)
    f = click.option("--tol-loglik", default=1e-6, show_default=True,
                     help="Relative log-likelihood convergence tolerance.")(f)
    f = click.option("--tol-pi", default=1e-8, show_default=True,
                     help="Squared-change convergence tolerance for pi.")(f)
    f = click.option("--reseed-empty", is_flag=True,
                     help="Reinitialize clusters that lose all responsibility mass.")(f)
    f = click.option("--threads", default=1, show_default=True,
                     help="Worker threads for restarts; results do not depend on it.")(f)
    return f


def _ingest(matrix_path, genes_path, barcodes_path, dense_path,
            min_genes_per_cell, min_cells_per_gene, top_genes):
    """Load, filter and gene-select; returns (matrix, provenance dict)."""
    if dense_path is None and matrix_path is None:
        raise StageFailure("load", ValidationError(
            "provide either --dense or --matrix with --genes and --barcodes"))
    if dense_path is not None and matrix_path is not None:
        raise StageFailure("load", ValidationError("--dense and --matrix are exclusive"))

    with stage("load"):
        if dense_path is not None:
            _require_files(dense_path)
            m = load_dense_tsv(dense_path)
            source = {"dense": str(dense_path)}
        else:
            if genes_path is None or barcodes_path is None:
                raise ValidationError("--matrix requires --genes and --barcodes")
            _require_files(matrix_path, genes_path, barcodes_path)
            m = load_sparse_matrix(matrix_path, genes_path, barcodes_path)
            source = {
                "matrix": str(matrix_path),
                "genes": str(genes_path),
                "barcodes": str(barcodes_path),
            }
    info = {"input": source, "loaded_shape": [m.n_genes, m.n_cells]}

    with stage("filter"):
        m, report = filter_cells_and_genes(m, min_genes_per_cell, min_cells_per_gene)
        info["filter"] = {
            "cells_removed": report.cells_removed,
            "genes_removed": report.genes_removed,
            "genes_selected": report.genes_selected,
            **report.criteria,
        }

    with stage("select-genes"):
        if top_genes > 0:
            n = min(top_genes, m.n_genes)
            if n < top_genes:
                logger.warning(
                    "requested %d top genes but only %d remain; keeping all",
                    top_genes, m.n_genes,
                )
            m = select_top_variable_genes(m, n)
        info["top_genes"] = top_genes

    with stage("validate"):
        alive = m.cell_totals > 0
        if not alive.all():
            dropped = int((~alive).sum())
            logger.warning(
                "dropping %d cell(s) left with zero counts after gene selection", dropped
            )
            m = m.subset_cells(alive)
            info["zero_total_cells_dropped"] = dropped
    info["final_shape"] = [m.n_genes, m.n_cells]
    return m, info


def _require_files(*paths) -> None:
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")


def _metadata_base(subcommand: str, seed: int | None, params: dict) -> dict:
    return {
        "tool": "umimix",
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "parameters": params,
    }


@cli.command("fit")
@matrix_input_options
@fit_config_options
@click.option("--k", required=True, type=int, help="Number of clusters.")
@click.option("--init", "init_code", default="kr", show_default=True,
              type=click.Choice(["kr", "kw", "rr", "rw"]),
              help="Label source (kmeans/random) x alpha estimator (Ronning/Weir-Hill).")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "outdir", required=True, type=click.Path())
@click.option("--no-figures", is_flag=True, help="Skip PNG rendering.")
def cmd_fit(matrix_path, genes_path, barcodes_path, dense_path, min_genes_per_cell,
            min_cells_per_gene, top_genes, restarts, max_iter, tol_loglik, tol_pi,
            reseed_empty, threads, k, init_code, seed, outdir, no_figures):
    """Fit the mixture and write labels, posteriors, alphas, pi and metadata."""

    def body():
        m, info = _ingest(matrix_path, genes_path, barcodes_path, dense_path,
                          min_genes_per_cell, min_cells_per_gene, top_genes)
        with stage("config"):
            if k < 1:
                raise ValidationError("--k must be >= 1")
            cfg = FitConfig(
                max_iterations=max_iter, loglik_rel_tol=tol_loglik, pi_sq_tol=tol_pi,
                n_restarts=restarts, reseed_empty=reseed_empty, n_threads=threads,
            )
            strategy = InitStrategy.from_code(init_code)
        with stage("fit"):
            result = fit_multi_restart(m, k, strategy, cfg, seed=seed)
        with stage("write"):
            paths = write_fit_outputs(outdir, m, result)
            doc = _metadata_base("fit", seed, {
                "k": k, "init": init_code, **info,
                "threads": threads,
            })
            doc["fit"] = fit_metadata(result, cfg)
            write_run_metadata(outdir, doc)
            if not no_figures:
                from .report import save_loglik_trace
                save_loglik_trace(Path(outdir) / "loglik_trace.png", result.loglik_trace)
        click.echo(
            f"fit: K={k} init={init_code} converged={result.converged} "
            f"iterations={result.iterations} loglik={result.final_loglik:.6g}"
        )
        click.echo(f"labels written to {paths['labels']}")

    _run(body)


def _parse_k_range(text: str) -> list[int]:
    text = text.strip()
    try:
        if ":" in text:
            lo, hi = text.split(":")
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"cannot parse --k-range {text!r}: use LO:HI or a comma list") from exc
    if not values or any(v < 1 for v in values):
        raise ValidationError("--k-range must contain integers >= 1")
    return values


def _truth_for_matrix(truth_path, m: SparseCountMatrix) -> np.ndarray:
    cells, labels = read_labels_tsv(truth_path)
    lookup = dict(zip(cells, labels))
    if len(lookup) != len(cells):
        raise ValidationError(f"{truth_path}: duplicate cell IDs")
    missing = [c for c in m.cell_ids if c not in lookup]
    if missing:
        raise ValidationError(
            f"{truth_path}: no label for {len(missing)} matrix cell(s), e.g. {missing[0]!r}"
        )
    return np.array([lookup[c] for c in m.cell_ids], dtype=np.int64)


@cli.command("select-k")
@matrix_input_options
@fit_config_options
@click.option("--k-range", "k_range_text", required=True,
              help="Candidate cluster counts, e.g. 2:6 or 2,3,5.")
@click.option("--init", "init_code", default="kr", show_default=True,
              type=click.Choice(["kr", "kw", "rr", "rw"]))
@click.option("--truth", "truth_path", type=click.Path(), default=None,
              help="Optional truth labels TSV; adds an ARI column.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "outdir", required=True, type=click.Path())
@click.option("--no-figures", is_flag=True)
def cmd_select_k(matrix_path, genes_path, barcodes_path, dense_path, min_genes_per_cell,
                 min_cells_per_gene, top_genes, restarts, max_iter, tol_loglik, tol_pi,
                 reseed_empty, threads, k_range_text, init_code, truth_path, seed,
                 outdir, no_figures):
    """Sweep K, tabulate AIC/BIC and report the selected cluster counts."""

    def body():
        m, info = _ingest(matrix_path, genes_path, barcodes_path, dense_path,
                          min_genes_per_cell, min_cells_per_gene, top_genes)
        with stage("config"):
            ks = _parse_k_range(k_range_text)
            cfg = FitConfig(
                max_iterations=max_iter, loglik_rel_tol=tol_loglik, pi_sq_tol=tol_pi,
                n_restarts=restarts, reseed_empty=reseed_empty, n_threads=threads,
            )
            strategy = InitStrategy.from_code(init_code)
            truth = None
            if truth_path is not None:
                _require_files(truth_path)
                truth = _truth_for_matrix(truth_path, m)
        with stage("fit"):
            table = select_k(m, ks, strategy, cfg, seed=seed, truth_labels=truth)
        with stage("write"):
            path = write_selection_table(outdir, table)
            doc = _metadata_base("select-k", seed, {
                "k_range": ks, "init": init_code, **info, "threads": threads,
                "config": dataclasses.asdict(cfg),
            })
            doc["selection"] = {
                "best_k_aic": table.best_k_aic,
                "best_k_bic": table.best_k_bic,
            }
            write_run_metadata(outdir, doc)
            if not no_figures:
                from .report import save_selection_plot
                save_selection_plot(Path(outdir) / "selection.png", table)
        click.echo(f"selected K by AIC: {table.best_k_aic} / by BIC: {table.best_k_bic}")
        click.echo(f"table written to {path}")

    _run(body)


@cli.command("simulate")
@click.option("--axis", type=click.Choice(SCENARIO_AXES), default=None,
              help="Scenario axis; combine with --level.")
@click.option("--level", type=float, default=None,
              help="Axis level (count for size axes, multiplier for snr).")
@click.option("--k", default=3, show_default=True)
@click.option("--n-genes", default=100, show_default=True)
@click.option("--n-cells", default=600, show_default=True)
@click.option("--depth", default=1000, show_default=True,
              help="Fixed total UMI count per cell.")
@click.option("--informative-fraction", default=0.3, show_default=True)
@click.option("--separation", default=4.0, show_default=True,
              help="Additive boost of cluster-specific genes.")
@click.option("--proportions", default=None,
              help="Comma-separated cluster proportions; default uniform.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "outdir", required=True, type=click.Path())
def cmd_simulate(axis, level, k, n_genes, n_cells, depth, informative_fraction,
                 separation, proportions, seed, outdir):
    """Draw a synthetic count matrix and write it with its ground truth."""

    def body():
        with stage("config"):
            if axis is not None:
                if level is None:
                    raise ValidationError("--axis requires --level")
                spec = make_scenario(axis, level, seed=seed)
            else:
                props = None
                if proportions is not None:
                    try:
                        props = np.array([float(v) for v in proportions.split(",")])
                    except ValueError as exc:
                        raise ValidationError(f"cannot parse --proportions {proportions!r}") from exc
                spec = build_spec(
                    n_clusters=k, n_genes=n_genes, n_cells=n_cells, depth=depth,
                    informative_fraction=informative_fraction, separation=separation,
                    cluster_proportions=props, seed=seed,
                )
        with stage("simulate"):
            matrix, labels, _ = simulate(spec)
        with stage("write"):
            out = Path(outdir)
            out.mkdir(parents=True, exist_ok=True)
            write_matrix_market(matrix, out / "matrix.mtx", out / "genes.tsv",
                                out / "barcodes.tsv")
            write_labels_tsv(out / "truth_labels.tsv", matrix.cell_ids, labels)
            (out / "sim_spec.json").write_text(spec.to_json() + "\n", encoding="utf-8")
            doc = _metadata_base("simulate", seed, {
                "axis": axis, "level": level,
                "n_clusters": spec.n_clusters, "n_genes": spec.n_genes,
                "n_cells": spec.n_cells, "depth": spec.depth,
                "n_informative_genes": spec.n_informative_genes,
            })
            write_run_metadata(out, doc)
        click.echo(
            f"simulated {spec.n_cells} cells x {spec.n_genes} genes "
            f"(K={spec.n_clusters}, depth={spec.depth}) -> {outdir}"
        )

    _run(body)


@cli.command("evaluate")
@click.option("--labels-a", "labels_a_path", type=click.Path(), default=None)
@click.option("--labels-b", "labels_b_path", type=click.Path(), default=None)
@click.option("--posterior", "posterior_path", type=click.Path(), default=None,
              help="Posterior TSV; cells below --threshold are reported as vague.")
@click.option("--threshold", default=0.95, show_default=True)
@click.option("--out", "outdir", type=click.Path(), default=None)
def cmd_evaluate(labels_a_path, labels_b_path, posterior_path, threshold, outdir):
    """Compare two labelings (ARI) and/or list vague cells from a posterior."""

    def body():
        did_anything = False
        results = {}
        if labels_a_path is not None or labels_b_path is not None:
            with stage("evaluate"):
                if labels_a_path is None or labels_b_path is None:
                    raise ValidationError("--labels-a and --labels-b go together")
                _require_files(labels_a_path, labels_b_path)
                cells_a, la = read_labels_tsv(labels_a_path)
                cells_b, lb = read_labels_tsv(labels_b_path)
                la, lb = align_labels(cells_a, la, cells_b, lb)
                ari = adjusted_rand_index(la, lb)
                results["ari"] = ari
                click.echo(f"ARI\t{ari:.12g}")
                did_anything = True
        if posterior_path is not None:
            with stage("evaluate"):
                _require_files(posterior_path)
                cells, post = read_posterior_tsv(posterior_path)
                vague = vague_cells(post, threshold)
                results["n_vague"] = int(vague.size)
                results["vague_cells"] = [cells[i] for i in vague]
                click.echo(f"vague_cells\t{vague.size}\t(threshold {threshold})")
                did_anything = True
        if not did_anything:
            raise StageFailure("config", ValidationError(
                "nothing to do: provide --labels-a/--labels-b and/or --posterior"))
        if outdir is not None:
            with stage("write"):
                out = Path(outdir)
                out.mkdir(parents=True, exist_ok=True)
                if "ari" in results:
                    (out / "metrics.tsv").write_text(
                        f"metric\tvalue\nari\t{results['ari']:.12g}\n", encoding="utf-8")
                if "vague_cells" in results:
                    with open(out / "vague_cells.tsv", "w", encoding="utf-8") as fh:
                        fh.write("cell_id\n")
                        for cell in results["vague_cells"]:
                            fh.write(cell + "\n")
                doc = _metadata_base("evaluate", None, {
                    "labels_a": labels_a_path, "labels_b": labels_b_path,
                    "posterior": posterior_path, "threshold": threshold,
                })
                doc["results"] = {k: v for k, v in results.items() if k != "vague_cells"}
                write_run_metadata(out, doc)

    _run(body)


@cli.command("diagnose")
@matrix_input_options
@click.option("--labels", "labels_path", type=click.Path(), default=None,
              help="Cluster labels TSV; combine with --cluster to pick members.")
@click.option("--cluster", "cluster_id", type=int, default=None)
@click.option("--top-fraction", default=0.01, show_default=True,
              help="Share of most-variable genes used in the regression.")
@click.option("--bins", default=20, show_default=True)
@click.option("--marginal-genes", default=None,
              help="Comma-separated gene IDs for Beta-marginal tables.")
@click.option("--n-marginal-genes", default=2, show_default=True,
              help="If no IDs given, use this many top-variance genes.")
@click.option("--out", "outdir", required=True, type=click.Path())
@click.option("--no-figures", is_flag=True)
def cmd_diagnose(matrix_path, genes_path, barcodes_path, dense_path, min_genes_per_cell,
                 min_cells_per_gene, top_genes, labels_path, cluster_id, top_fraction,
                 bins, marginal_genes, n_marginal_genes, outdir, no_figures):
    """Check model fit within one cluster: Beta marginals and the
    mean-variance relationship of per-gene proportions."""

    def body():
        m, info = _ingest(matrix_path, genes_path, barcodes_path, dense_path,
                          min_genes_per_cell, min_cells_per_gene, top_genes)
        with stage("config"):
            if labels_path is not None:
                if cluster_id is None:
                    raise ValidationError("--labels requires --cluster")
                _require_files(labels_path)
                truth = _truth_for_matrix(labels_path, m)
                members = np.nonzero(truth == cluster_id)[0]
                if members.size < 2:
                    raise ValidationError(
                        f"cluster {cluster_id} has {members.size} member cell(s); need >= 2")
            else:
                members = np.arange(m.n_cells)
        with stage("diagnose"):
            fit = mean_variance_regression(m, members, top_fraction=top_fraction)
            alpha = ronning_alpha(m, members)
            if marginal_genes is not None:
                wanted = [g.strip() for g in marginal_genes.split(",") if g.strip()]
                index = {g: i for i, g in enumerate(m.gene_ids)}
                missing = [g for g in wanted if g not in index]
                if missing:
                    raise ValidationError(f"unknown gene ID(s): {', '.join(missing)}")
                gene_indices = [index[g] for g in wanted]
            else:
                mean, var, _ = proportion_moments(m, members)
                order = np.argsort(-np.sqrt(var), kind="stable")
                gene_indices = [int(i) for i in order[:max(1, n_marginal_genes)]]
            tables = [
                beta_marginal_table(m, members, alpha, gene, n_bins=bins)
                for gene in gene_indices
            ]
        with stage("write"):
            out = Path(outdir)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "mean_variance.tsv", "w", encoding="utf-8") as fh:
                fh.write("gene_id\tlog_mean\tlog_variance\n")
                for gi, lm, lv in zip(fit.gene_indices, fit.log_means, fit.log_variances):
                    fh.write(f"{m.gene_ids[gi]}\t{lm:.12g}\t{lv:.12g}\n")
            for table in tables:
                name = f"beta_marginal_{table.gene_id}"
                with open(out / f"{name}.tsv", "w", encoding="utf-8") as fh:
                    fh.write("bin_left\tbin_right\tempirical_mass\ttheoretical_mass"
                             "\tempirical_density\ttheoretical_density\n")
                    for b in range(table.empirical_mass.size):
                        fh.write("\t".join(
                            f"{v:.12g}" for v in (
                                table.bin_edges[b], table.bin_edges[b + 1],
                                table.empirical_mass[b], table.theoretical_mass[b],
                                table.empirical_density[b], table.theoretical_density[b],
                            )) + "\n")
            doc = _metadata_base("diagnose", None, {
                **info, "labels": labels_path, "cluster": cluster_id,
                "top_fraction": top_fraction, "bins": bins,
                "marginal_genes": [m.gene_ids[g] for g in gene_indices],
            })
            doc["mean_variance"] = {
                "slope": fit.slope, "intercept": fit.intercept,
                "expected_slope": fit.expected_slope,
                "expected_intercept": fit.expected_intercept,
                "alpha_precision": fit.alpha_precision,
                "n_genes_used": int(fit.gene_indices.size),
            }
            write_run_metadata(out, doc)
            if not no_figures:
                from .report import save_beta_marginal_plot, save_mean_variance_plot
                save_mean_variance_plot(out / "mean_variance.png", fit)
                for table in tables:
                    save_beta_marginal_plot(
                        out / f"beta_marginal_{table.gene_id}.png", table)
        click.echo(
            f"mean-variance: slope {fit.slope:.3f} (model 1), "
            f"intercept {fit.intercept:.3f} (model {fit.expected_intercept:.3f})"
        )

    _run(body)


def main() -> None:
    cli(prog_name="umimix")


if __name__ == "__main__":
    main()
