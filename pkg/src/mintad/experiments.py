"""Multi-seed sweeps: synthetic benchmark, submodule ablation, toy boundaries."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .toy import ToyConfig, ToyResult, toy_boundary_experiment
from .train import run_benchmark

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationRow:
    name: str
    adapter: bool
    ce: bool
    prior: bool
    query: bool

    def apply(self, cfg: RunConfig) -> RunConfig:
        """Switch components off; enabled losses keep the weights in ``cfg``."""
        return cfg.replace(
            run_id=f"{cfg.run_id}-{self.name}",
            model={"use_adapter": self.adapter, "use_query": self.query},
            loss={"lambda_ce": cfg.loss.lambda_ce if self.ce else 0.0,
                  "lambda_prior": cfg.loss.lambda_prior if self.prior else 0.0},
        )


ABLATION_ROWS: tuple[AblationRow, ...] = (
    AblationRow("bare", False, False, False, False),
    AblationRow("adapter", True, False, False, False),
    AblationRow("adapter_ce", True, True, False, False),
    AblationRow("no_prior", True, True, False, True),
    AblationRow("no_query", True, True, True, False),
    AblationRow("full", True, True, True, True),
)


def row_by_name(name: str) -> AblationRow:
    for row in ABLATION_ROWS:
        if row.name == name:
            return row
    raise KeyError(f"unknown ablation row {name!r}; choose from {[r.name for r in ABLATION_ROWS]}")


def benchmark_experiment(cfg: RunConfig, seeds: Sequence[int] = (0, 1, 2),
                         out_dir: str | Path | None = None) -> dict:
    """Train and evaluate once per seed.

    Returns ``{"per_seed": {seed: metrics}, "mean": {metric: value}}``
    where ``mean`` averages each metric over seeds.
    """
    per_seed = {}
    for seed in seeds:
        run = cfg.replace(seed=seed)
        sub = Path(out_dir, f"seed{seed}") if out_dir is not None else None
        _, ev = run_benchmark(run, sub)
        per_seed[seed] = ev.metrics
        log.info("%s seed %d: %s", cfg.run_id, seed, ev.metrics)
    keys = sorted(set().union(*(m.keys() for m in per_seed.values())))
    mean = {k: float(np.mean([m[k] for m in per_seed.values() if k in m])) for k in keys}
    return {"per_seed": per_seed, "mean": mean}


ABLATION_HEADER = ("row", "adapter", "ce", "prior", "query", "seed", "i_auroc", "p_aupr")


def ablation_experiment(cfg: RunConfig, seeds: Sequence[int] = (0, 1, 2),
                        rows: Sequence[AblationRow] = ABLATION_ROWS,
                        out_dir: str | Path | None = None) -> list[dict]:
    """One benchmark sweep per ablation row.

    Every row is reported, with per-seed and seed-mean I-AUROC / P-AUPR.
    With ``out_dir`` the table is also written to ``ablation.csv`` (seed
    column ``mean`` for the averages).
    """
    table = []
    for row in rows:
        res = benchmark_experiment(row.apply(cfg), seeds,
                                   Path(out_dir, row.name) if out_dir is not None else None)
        table.append({
            "row": row,
            "per_seed": {s: (m.get("i_auroc/mean", float("nan")), m.get("p_aupr/mean", float("nan")))
                         for s, m in res["per_seed"].items()},
            "i_auroc": res["mean"].get("i_auroc/mean", float("nan")),
            "p_aupr": res["mean"].get("p_aupr/mean", float("nan")),
        })
    if out_dir is not None:
        write_ablation_csv(Path(out_dir, "ablation.csv"), table)
    return table


def write_ablation_csv(path: str | Path, table: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ABLATION_HEADER)
        for entry in table:
            r = entry["row"]
            flags = [int(r.adapter), int(r.ce), int(r.prior), int(r.query)]
            for seed, (ia, pa) in entry["per_seed"].items():
                w.writerow([r.name, *flags, seed, repr(ia), repr(pa)])
            w.writerow([r.name, *flags, "mean", repr(entry["i_auroc"]), repr(entry["p_aupr"])])


def toy_experiment(cfg: ToyConfig, seeds: Sequence[int] = range(5),
                   out_dir: str | Path | None = None) -> dict[int, ToyResult]:
    """Run the boundary experiment for each seed; metrics for all seeds are
    appended to a single ``metrics.csv``."""
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        Path(out_dir, "metrics.csv").unlink(missing_ok=True)
    results = {}
    for seed in seeds:
        sub = None
        if out_dir is not None:
            sub = Path(out_dir, f"seed{seed}")
        res = toy_boundary_experiment(replace(cfg, seed=seed), sub)
        if out_dir is not None:
            _append_rows(Path(out_dir, "metrics.csv"), Path(sub, "metrics.csv"))
        results[seed] = res
    return results


def _append_rows(dst: Path, src: Path) -> None:
    lines = src.read_text().splitlines(keepends=True)
    if dst.exists():
        lines = lines[1:]
    with open(dst, "a") as fh:
        fh.writelines(lines)


def toy_summary(results: dict[int, ToyResult]) -> dict[str, float]:
    """Seed-aggregated toy diagnostics: the vanilla-minus-denoising shortcut
    gap (seed mean), the per-seed interference comparisons as counts."""
    ms = [r.metrics for r in results.values()]
    gap = np.mean([m["shortcut_index/vanilla_single"] - m["shortcut_index/denoising_single"] for m in ms])
    unified_lt_ens = sum(m["interference_index/denoising_unified"] < m["interference_index/denoising_ensemble"]
                         for m in ms)
    mint_ge_unified = sum(m["interference_index/mint_unified"] >= m["interference_index/denoising_unified"]
                          for m in ms)
    return {"shortcut_gap": float(gap), "unified_below_ensemble": unified_lt_ens,
            "mint_at_least_unified": mint_ge_unified, "seeds": len(ms)}
