"""End-to-end experiment: production ranker, simulated clicks, DLA training, evaluation, result bundle.

The bundle written to ``output_dir`` is a pure function of the config:

    manifest.txt              every config value with provenance, every derived seed
    table.txt / table.csv     mean metrics per model, significance vs. univariate_mlp
    plot_data.csv             training history of every run (step vs. losses and metrics)
    runs/<model>/rep<r>/      metrics.csv (per query), history.csv, checkpoints
"""

from __future__ import annotations

import csv
import io
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ultrkit import __version__, kernels, metrics
from ultrkit.config import ExperimentConfig
from ultrkit.dla import TrainResult, eval_order_seed, evaluate_scorer, pack_lists, train_dla, train_naive
from ultrkit.letor import Dataset, generate_synthetic, minmax_scale, read_letor, sample_fraction, split_queries
from ultrkit.metrics import METRIC_COLUMNS
from ultrkit.prod import LinearRanker, RankedList, rank_dataset, train_prod
from ultrkit.scorers import ScorerKind

log = logging.getLogger(__name__)

BASELINE = "univariate_mlp"
PROD = "prod"


def derive_seed(master: int, name: str, rep: int) -> int:
    """Seed for one (name, repetition) pair, stable across runs and platforms."""
    ss = np.random.SeedSequence([master, zlib.crc32(name.encode("utf-8")), rep])
    return int(ss.generate_state(1)[0])


def model_name(kind: ScorerKind, naive: bool = False) -> str:
    return f"naive {kind.tag}" if naive else kind.tag


def model_slug(name: str) -> str:
    return name.replace(" ", "-").replace("(", "-").replace(")", "")


@dataclass
class RepData:
    rep: int
    seeds: dict[str, int]
    ranker: LinearRanker
    train: list[RankedList]
    valid: list[RankedList]
    test: list[RankedList]


@dataclass
class ExperimentResult:
    out_dir: Path
    reports: dict[tuple[str, int], metrics.MetricReport] = field(default_factory=dict)
    histories: dict[tuple[str, int], TrainResult] = field(default_factory=dict)
    table: list[tuple[str, dict[str, float], dict[str, str]]] = field(default_factory=list)
    p_values: dict[tuple[str, str], float] = field(default_factory=dict)

    def pooled(self, model: str, metric: str) -> np.ndarray:
        """Per-query values of ``metric`` for ``model`` concatenated over repetitions."""
        reps = sorted(r for (m, r) in self.reports if m == model)
        return np.concatenate([self.reports[(model, r)].per_query[metric] for r in reps])

    def mse(self, model: str) -> list[float]:
        reps = sorted(r for (m, r) in self.reports if m == model)
        return [self.reports[(model, r)].mse_propen for r in reps]


def load_dataset(cfg: ExperimentConfig) -> Dataset | None:
    """Read a file dataset up front so I/O problems surface before any training."""
    source = cfg["data.source"]
    if source == "synthetic":
        return None
    return read_letor(source, max_label=cfg["gen.max_label"])


def prepare_rep(cfg: ExperimentConfig, rep: int, dataset: Dataset | None = None) -> RepData:
    """Data split, production ranker and displayed lists for one repetition."""
    master = cfg["master_seed"]
    seeds = {name: derive_seed(master, name, rep)
             for name in ("data", "split", "prod", "ties.train", "ties.valid", "ties.test")}
    if dataset is None:
        dataset = generate_synthetic(cfg.gen, seeds["data"])
    train, valid, test = split_queries(dataset, cfg["data.split"], seeds["split"])
    if cfg.normalize:
        train, valid, test = (minmax_scale(d, reference=train) for d in (train, valid, test))
    sample = sample_fraction(train, cfg["prod.fraction"], seeds["prod"])
    ranker = train_prod(sample, cfg.prod, seeds["prod"])
    size = cfg["train.list_size"]
    lists = [
        [rl.truncate(size) for rl in rank_dataset(ranker, d, seeds[f"ties.{part}"])]
        for d, part in ((train, "train"), (valid, "valid"), (test, "test"))
    ]
    return RepData(rep, seeds, ranker, *lists)


def _prod_report(data: RepData, max_label: int) -> metrics.MetricReport:
    per_query = metrics.ranking_metrics([rl.labels for rl in data.test], max_label)
    return metrics.MetricReport(PROD, data.seeds["prod"], [rl.qid for rl in data.test], per_query)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _check_writable(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-check"
    probe.write_text("")
    probe.unlink()


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    out = Path(cfg["output_dir"])
    dataset = load_dataset(cfg)
    _check_writable(out)
    curve, noise = cfg.curve(), cfg.noise
    kinds = cfg.kinds
    models = [(k, False) for k in kinds]
    if cfg["naive"]:
        models.append((ScorerKind(BASELINE), True))
    result = ExperimentResult(out)
    seed_lines = []
    plot = io.StringIO()
    plot_writer = csv.writer(plot, lineterminator="\n")
    plot_writer.writerow(["model", "rep", "step", "loss_S", "loss_E", "mse_propen", "valid_ndcg10"])

    for rep in range(cfg["repetitions"]):
        data = prepare_rep(cfg, rep, dataset)
        seed_lines += [f"seed.{name}.rep{rep} = {s}" for name, s in data.seeds.items()]
        rep_dir = out / "runs" / PROD / f"rep{rep}"
        report = _prod_report(data, cfg["gen.max_label"])
        result.reports[(PROD, rep)] = report
        _write(rep_dir / "metrics.csv", report.per_query_csv())
        data.ranker.save(rep_dir / "ranker.txt")
        packed_test = pack_lists(data.test)

        for kind, naive in models:
            name = model_name(kind, naive)
            # the naive baseline shares its DLA counterpart's seed: same init, batches and clicks
            seed = derive_seed(cfg["master_seed"], kind.tag, rep)
            seed_lines.append(f"seed.{model_slug(name)}.rep{rep} = {seed}")
            log.info("rep %d: training %s (seed %d)", rep, name, seed)
            trainer = train_naive if naive else train_dla
            res = trainer(data.train, curve, noise, cfg.train_config(kind, seed), data.valid or None)
            per_query = evaluate_scorer(res.scorer, packed_test, cfg["gen.max_label"], eval_order_seed(seed))
            mse = None
            if res.propensity is not None:
                width = len(res.propensity.logits)
                mse = metrics.mse_propen(res.propensity.inverse_ratios(), curve.inverse_ratios(width))
            report = metrics.MetricReport(name, seed, packed_test.qids, per_query, mse,
                                          {"clipped": res.clipped})
            result.reports[(name, rep)] = report
            result.histories[(name, rep)] = res
            run_dir = out / "runs" / model_slug(name) / f"rep{rep}"
            _write(run_dir / "metrics.csv", report.per_query_csv())
            _write(run_dir / "history.csv", res.history_csv())
            res.scorer.save(run_dir / "scorer.txt")
            if res.propensity is not None:
                res.propensity.save(run_dir / "propensity.txt")
            for row in res.history:
                plot_writer.writerow([name, rep, *(
                    "" if row.get(c) is None else metrics.fmt_value(row[c])
                    for c in ("step", "loss_S", "loss_E", "mse_propen", "valid_ndcg10"))])

    names = [PROD] + [model_name(k, n) for k, n in models]
    _aggregate(result, names)
    _write(out / "table.txt", metrics.format_table(result.table))
    _write(out / "table.csv", _table_csv(result, names))
    _write(out / "plot_data.csv", plot.getvalue())
    _write(out / "manifest.txt", _manifest(cfg, seed_lines))
    return result


def _aggregate(result: ExperimentResult, names: list[str]) -> None:
    """Mean metrics per model, with +/- markers where a paired test against the baseline gives p < 0.05."""
    has_base = any(m == BASELINE for (m, _) in result.reports)
    for name in names:
        values: dict[str, float] = {}
        markers: dict[str, str] = {}
        for metric in METRIC_COLUMNS:
            pooled = result.pooled(name, metric)
            values[metric] = float(np.mean(pooled))
            if has_base and name != BASELINE:
                base = result.pooled(BASELINE, metric)
                p = metrics.significance_test(pooled, base)
                result.p_values[(name, metric)] = p
                if p < 0.05:
                    markers[metric] = "+" if pooled.mean() > base.mean() else "-"
        mses = [m for m in result.mse(name) if m is not None]
        if mses:
            values["MSE_propen"] = float(np.mean(mses))
        result.table.append((name, values, markers))


def _table_csv(result: ExperimentResult, names: list[str]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    cols = [*METRIC_COLUMNS, "MSE_propen"]
    writer.writerow(["model", *cols, *(f"p_{c}" for c in METRIC_COLUMNS)])
    for name, values, _ in result.table:
        cells = [metrics.fmt_value(values[c]) if c in values else "" for c in cols]
        ps = [metrics.fmt_value(result.p_values[(name, c)]) if (name, c) in result.p_values else ""
              for c in METRIC_COLUMNS]
        writer.writerow([name, *cells, *ps])
    return out.getvalue()


def _manifest(cfg: ExperimentConfig, seed_lines: list[str]) -> str:
    lines = [
        f"# ultrkit {__version__} result bundle",
        f"# kernel backend: {kernels.BACKEND}",
        f"# protocol preset: {cfg['protocol']}",
        f"# feature scaling: {'min-max' if cfg.normalize else 'off'}",
        "# production ranker: pairwise hinge-loss linear model (stochastic subgradient)",
        "# nDCG of a query with all labels zero is 1 by convention",
        "",
        "[config]",
        # output_dir is left out so a bundle does not depend on where it was written
        cfg.echo(skip=("output_dir",)).rstrip("\n"),
        "",
        "[seeds]",
        *seed_lines,
    ]
    return "\n".join(lines) + "\n"
