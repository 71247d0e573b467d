"""Experiment harness: density sweep over the three architectures, reports, CLI.

``run_sweep`` regenerates, for every (cell density, seed) pair, a network
with per-epoch misconfiguration assignments, simulates the configured number
of epochs, splits them 70/30 into train and test, trains all three diagnosis
architectures, and scores each misconfiguration family separately.  Output
is a pure function of the sweep configuration and seeds.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _engine, analytics, diagnosis, sim
from .diagnosis import InstanceSet, TrainConfig, TransferEnsemble
from .errors import ContractViolation, HetdiagError, ValidationError
from .scenario import (
    CONFIG_CLASSES,
    ConfigClass,
    NetworkLayout,
    ScenarioConfig,
    Tier,
    generate_layout,
    inject_misconfiguration,
    load_scenario,
    write_layout_csv,
)

_TAG_ASSIGN = 53
_TAG_SPLIT = 59

ARCHITECTURES = ("standalone", "unified", "transfer")

FAMILIES = {
    "tx_power": (ConfigClass.NOMINAL, ConfigClass.TX_TOO_STRONG, ConfigClass.TX_TOO_WEAK),
    "ho_margin": (
        ConfigClass.NOMINAL,
        ConfigClass.HO_MARGIN_TOO_LARGE,
        ConfigClass.HO_MARGIN_TOO_SMALL,
    ),
}

ROWS_CSV_HEADER = "architecture,family,density,seed,accuracy,n_train,n_test"
SUMMARY_CSV_HEADER = "architecture,family,density,accuracy_mean,accuracy_std,seeds"


@dataclass(frozen=True)
class SweepConfig:
    densities: tuple[int, ...] = (20, 40, 60, 80, 100)
    seeds: tuple[int, ...] = tuple(range(10))
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    misconfig_fraction: float = 0.4
    train_fraction: float = 0.7
    beta: float = 1.0
    hyper: TrainConfig = field(default_factory=TrainConfig)
    user_base: int = 30
    users_per_femto: float = 4.0
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValidationError("sweep needs at least one seed")
        if not 0.0 < self.misconfig_fraction <= 1.0:
            raise ValidationError("misconfig_fraction must be in (0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train_fraction must be in (0, 1)")


@dataclass(frozen=True)
class SweepRow:
    architecture: str
    family: str
    density: int
    seed: int
    accuracy: float
    n_train: int
    n_test: int


@dataclass(frozen=True)
class SweepError:
    density: int
    seed: int
    message: str


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    errors: tuple[SweepError, ...] = ()

    def accuracies(self, architecture: str, family: str, density: int) -> np.ndarray:
        return np.array(
            [
                r.accuracy
                for r in self.rows
                if r.architecture == architecture and r.family == family and r.density == density
            ]
        )

    def mean_accuracy(self, architecture: str, family: str, density: int) -> float:
        return float(np.mean(self.accuracies(architecture, family, density)))

    def summary(self) -> list[tuple]:
        """(architecture, family, density, mean, population std, n_seeds) rows."""
        out = []
        densities = sorted({r.density for r in self.rows})
        for family in FAMILIES:
            for arch in ARCHITECTURES:
                for d in densities:
                    acc = self.accuracies(arch, family, d)
                    if acc.size:
                        out.append((arch, family, d, float(acc.mean()), float(acc.std()), acc.size))
        return out


def derive_run_seed(base_seed: int, density: int, seed: int) -> int:
    """Stable 64-bit seed for one (density, seed) sweep cell."""
    ss = np.random.SeedSequence([int(base_seed), int(density), int(seed)])
    return int(ss.generate_state(1, np.uint64)[0])


def assign_misconfigurations(
    n_femtos: int, n_epochs: int, fraction: float, seed: int
) -> np.ndarray:
    """Per-epoch configuration classes: a random ``fraction`` of femtos is
    misconfigured each epoch, split evenly over the four fault classes."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _TAG_ASSIGN]))
    out = np.zeros((n_femtos, n_epochs), dtype=int)
    n_bad = int(round(fraction * n_femtos))
    fault_classes = np.arange(1, len(CONFIG_CLASSES))
    for e in range(n_epochs):
        chosen = rng.permutation(n_femtos)[:n_bad]
        classes = fault_classes[np.arange(n_bad) % fault_classes.size]
        out[chosen, e] = classes
    return out


def split_epochs(n_epochs: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic epoch-level train/test split.

    Every epoch carries the same class composition by construction, so an
    epoch split is stratified with respect to the labels.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _TAG_SPLIT]))
    perm = rng.permutation(n_epochs)
    n_train = int(round(train_fraction * n_epochs))
    n_train = min(max(n_train, 1), n_epochs - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _instance_set_from_run(result: _engine.RunResult, layout: NetworkLayout) -> InstanceSet:
    femto_pos = [i for i, c in enumerate(layout.cells) if c.tier is Tier.FEMTO]
    n_epochs = result.features.shape[1]
    X, y, cids, eids = [], [], [], []
    for i in femto_pos:
        X.append(result.features[i])
        y.append(result.labels[i])
        cids.append(np.full(n_epochs, result.cell_ids[i]))
        eids.append(np.arange(n_epochs))
    return InstanceSet(
        X=np.concatenate(X),
        y=np.concatenate(y),
        cell_ids=np.concatenate(cids),
        epoch_ids=np.concatenate(eids),
    )


def run_density_cell(cfg: SweepConfig, density: int, seed: int) -> list[SweepRow]:
    """Simulate and score one (density, seed) sweep cell: 6 result rows."""
    run_seed = derive_run_seed(cfg.scenario.rng_seed, density, seed)
    scenario = replace(
        cfg.scenario,
        femto_count=int(density),
        user_count=int(round(cfg.user_base + cfg.users_per_femto * density)),
        rng_seed=run_seed,
    )
    layout = generate_layout(scenario)
    assignment = assign_misconfigurations(
        density, scenario.epochs_per_run, cfg.misconfig_fraction, run_seed
    )
    result = _engine.simulate_run(layout, scenario, assignment, run_seed)
    full = _instance_set_from_run(result, layout)

    train_epochs, test_epochs = split_epochs(
        scenario.epochs_per_run, cfg.train_fraction, run_seed
    )
    train = full.select(np.isin(full.epoch_ids, train_epochs))
    test = full.select(np.isin(full.epoch_ids, test_epochs))

    cells = [int(c) for c in train.cells()]
    cell_pos = {c: j for j, c in enumerate(cells)}
    models = {c: diagnosis._train_or_constant(train.for_cell(c), cfg.hyper) for c in cells}
    unified = diagnosis.train_unified(train, cfg.hyper)

    bins = diagnosis.quantile_bins(train.X)
    gains = diagnosis.info_gain_all(train, bins)
    train_sets = [train.for_cell(c) for c in cells]
    div = diagnosis.pairwise_divergences(train_sets, gains, bins)
    omega = np.exp(-cfg.beta * div)

    n_test = len(test)
    per_model_pred = np.stack([models[c].predict_batch(test.X) for c in cells])  # (F, n_test)
    target_pos = np.array([cell_pos[c] for c in test.cell_ids])

    standalone_pred = per_model_pred[target_pos, np.arange(n_test)]
    unified_pred = unified.model.predict_batch(test.X)
    votes = np.zeros((n_test, len(CONFIG_CLASSES)))
    idx = np.arange(n_test)
    for j in range(len(cells)):
        votes[idx, per_model_pred[j]] += omega[target_pos, j]
    transfer_pred = np.argmax(votes, axis=1)

    preds = {"standalone": standalone_pred, "unified": unified_pred, "transfer": transfer_pred}
    rows = []
    for family, classes in FAMILIES.items():
        fam_idx = [CONFIG_CLASSES.index(c) for c in classes]
        mask = np.isin(test.y, fam_idx)
        for arch in ARCHITECTURES:
            acc = float(np.mean(preds[arch][mask] == test.y[mask]))
            rows.append(
                SweepRow(
                    architecture=arch,
                    family=family,
                    density=int(density),
                    seed=int(seed),
                    accuracy=acc,
                    n_train=len(train),
                    n_test=int(mask.sum()),
                )
            )
    return rows


def make_transfer_ensembles(
    train: InstanceSet, beta: float, hyper: TrainConfig = TrainConfig()
) -> dict[int, TransferEnsemble]:
    """Transfer ensembles for every cell, sharing models, bins, and gains."""
    bins = diagnosis.quantile_bins(train.X)
    gains = diagnosis.info_gain_all(train, bins)
    cells = [int(c) for c in train.cells()]
    models = {c: diagnosis._train_or_constant(train.for_cell(c), hyper) for c in cells}
    sets = [train.for_cell(c) for c in cells]
    div = diagnosis.pairwise_divergences(sets, gains, bins)
    out = {}
    for j, c in enumerate(cells):
        out[c] = TransferEnsemble(
            target_cell=c,
            beta=beta,
            models=models,
            divergences={cells[k]: float(div[j, k]) for k in range(len(cells))},
        )
    return out


def _job(args) -> tuple[int, int, list[SweepRow], Optional[str]]:
    cfg, density, seed = args
    try:
        return density, seed, run_density_cell(cfg, density, seed), None
    except Exception as exc:  # recorded, sweep continues
        return density, seed, [], f"{type(exc).__name__}: {exc}"


def run_sweep(cfg: SweepConfig) -> SweepResult:
    """Full density sweep; failed cells become error records, not crashes."""
    jobs = [(cfg, d, s) for d in cfg.densities for s in cfg.seeds]
    results = []
    if cfg.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]

    rows: list[SweepRow] = []
    errors: list[SweepError] = []
    for density, seed, cell_rows, err in results:
        if err is not None:
            errors.append(SweepError(density=density, seed=seed, message=err))
        rows.extend(cell_rows)
    rows.sort(key=lambda r: (
        list(ARCHITECTURES).index(r.architecture),
        list(FAMILIES).index(r.family),
        r.density,
        r.seed,
    ))
    return SweepResult(rows=tuple(rows), errors=tuple(errors))


# ---------------------------------------------------------------------------
# reports


def write_rows_csv(result: SweepResult, path) -> None:
    with open(path, "w") as fh:
        fh.write(ROWS_CSV_HEADER + "\n")
        for r in result.rows:
            fh.write(
                f"{r.architecture},{r.family},{r.density},{r.seed},{r.accuracy!r},"
                f"{r.n_train},{r.n_test}\n"
            )


def load_rows_csv(path) -> SweepResult:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != ROWS_CSV_HEADER:
            raise ValidationError("unexpected sweep rows CSV header")
        for line in fh:
            arch, family, density, seed, acc, n_train, n_test = line.strip().split(",")
            rows.append(
                SweepRow(arch, family, int(density), int(seed), float(acc), int(n_train), int(n_test))
            )
    return SweepResult(rows=tuple(rows))


def _summary_csv(result: SweepResult) -> str:
    lines = [SUMMARY_CSV_HEADER]
    for arch, family, density, mean, std, n in result.summary():
        lines.append(f"{arch},{family},{density},{mean!r},{std!r},{n}")
    return "\n".join(lines) + "\n"


_FAMILY_TITLES = {"tx_power": "TX power", "ho_margin": "HO margin"}
_ARCH_TITLES = {"standalone": "Cell-specific", "unified": "Unified model", "transfer": "Transfer learning"}


def _markdown_table(result: SweepResult) -> str:
    densities = sorted({r.density for r in result.rows})
    lines = ["| Cell density | " + " | ".join(str(d) for d in densities) + " |"]
    lines.append("|---" * (len(densities) + 1) + "|")
    for family in FAMILIES:
        for arch in ARCHITECTURES:
            vals = []
            for d in densities:
                acc = result.accuracies(arch, family, d)
                vals.append(f"{acc.mean():.2f}" if acc.size else "-")
            lines.append(
                f"| {_ARCH_TITLES[arch]} ({_FAMILY_TITLES[family]}) | " + " | ".join(vals) + " |"
            )
    return "\n".join(lines) + "\n"


def report(result: SweepResult, fmt: str, out_dir) -> list[Path]:
    """Write sweep results in one of the supported formats; returns paths.

    ``csv`` writes both the per-seed rows (full fidelity, round-trips back to
    an equal SweepResult) and the seed-aggregated summary.
    """
    if not result.rows:
        raise ValidationError("cannot report an empty sweep result")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        rows_path = out_dir / "sweep_rows.csv"
        write_rows_csv(result, rows_path)
        written.append(rows_path)
        summary_path = out_dir / "sweep_summary.csv"
        summary_path.write_text(_summary_csv(result))
        written.append(summary_path)
    elif fmt == "markdown-table":
        path = out_dir / "sweep_table.md"
        path.write_text(_markdown_table(result))
        written.append(path)
    elif fmt == "plot-data":
        for family in FAMILIES:
            for arch in ARCHITECTURES:
                densities = sorted({r.density for r in result.rows})
                lines = ["density,accuracy_mean"]
                for d in densities:
                    acc = result.accuracies(arch, family, d)
                    if acc.size:
                        lines.append(f"{d},{float(acc.mean())!r}")
                path = out_dir / f"series_{arch}_{family}.csv"
                path.write_text("\n".join(lines) + "\n")
                written.append(path)
    else:
        raise ValidationError(f"unknown report format {fmt!r}")
    return written


# ---------------------------------------------------------------------------
# command line interface


def _load_scenario_arg(args) -> ScenarioConfig:
    scenario = load_scenario(args.scenario) if args.scenario else ScenarioConfig()
    if args.seed is not None:
        scenario = replace(scenario, rng_seed=int(args.seed))
    return scenario


def _cmd_layout(args) -> int:
    scenario = _load_scenario_arg(args)
    layout = generate_layout(scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "layout.csv"
    write_layout_csv(layout, path)
    print(f"wrote {path}")
    return 0


def _cmd_simulate(args) -> int:
    scenario = _load_scenario_arg(args)
    layout = generate_layout(scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    assignment = None
    if args.misconfig_fraction > 0 and scenario.femto_count > 0:
        assignment = assign_misconfigurations(
            scenario.femto_count, scenario.epochs_per_run,
            args.misconfig_fraction, scenario.rng_seed,
        )
    result = _engine.simulate_run(layout, scenario, assignment, scenario.rng_seed)
    instance_set = _instance_set_from_run(result, layout)
    instances = [
        sim.Instance(
            cell_id=int(c), epoch_id=int(e),
            features=sim.FeatureVector.from_array(x),
            label=CONFIG_CLASSES[int(y)],
        )
        for x, y, c, e in zip(instance_set.X, instance_set.y, instance_set.cell_ids, instance_set.epoch_ids)
    ]
    inst_path = out / "instances.csv"
    sim.write_instances_csv(instances, inst_path)
    print(f"wrote {inst_path}")

    # detailed event log for the first epoch
    epoch_layout = layout
    if assignment is not None:
        for j, cell in enumerate(layout.femtos):
            epoch_layout = inject_misconfiguration(
                epoch_layout, cell.id, CONFIG_CLASSES[int(assignment[j, 0])]
            )
    users = sim.make_users(epoch_layout, scenario, scenario.rng_seed, epoch_id=0)
    _, log = sim.run_epoch(epoch_layout, users, scenario, 0, scenario.rng_seed)
    log_path = out / "events_epoch0.jsonl"
    sim.write_event_log(log, log_path)
    print(f"wrote {log_path}")
    return 0


def _cmd_analyze(args) -> int:
    scenario = _load_scenario_arg(args)
    layout = generate_layout(scenario)
    records = analytics.load_event_log(args.log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    table = analytics.traffic_by_category_and_location(
        analytics.traffic_records_from_log(records), layout
    )
    table_path = out / "traffic_by_category_location.csv"
    analytics.write_group_means_csv(table, table_path)
    print(f"wrote {table_path}")

    trajectories = analytics.trajectories_from_log(records)
    ho_counts = analytics.handover_counts_from_log(records)
    bytes_per_user: dict[int, float] = {}
    for rec in analytics.traffic_records_from_log(records):
        bytes_per_user[int(rec["user_id"])] = bytes_per_user.get(int(rec["user_id"]), 0.0) + float(rec["bytes"])
    mob_path = out / "user_mobility.csv"
    with open(mob_path, "w") as fh:
        fh.write("user_id,rog_m,visited_cells,handover_count,traffic_bytes\n")
        for user in sorted(trajectories):
            traj = trajectories[user]
            fh.write(
                f"{user},{analytics.radius_of_gyration(traj)!r},{analytics.visited_cells(traj)},"
                f"{ho_counts.get(user, 0)},{bytes_per_user.get(user, 0.0)!r}\n"
            )
    print(f"wrote {mob_path}")

    pairs = [
        (float(ho_counts.get(u, 0)), bytes_per_user.get(u, 0.0)) for u in sorted(trajectories)
    ]
    try:
        rho = analytics.handover_traffic_correlation(pairs)
        print(f"handover/traffic Spearman correlation: {rho:.3f}")
    except ValidationError as exc:
        print(f"handover/traffic correlation unavailable: {exc}")
    return 0


def _cmd_sweep(args) -> int:
    scenario = _load_scenario_arg(args)
    densities = tuple(int(d) for d in args.densities.split(",")) if args.densities else (20, 40, 60, 80, 100)
    cfg = SweepConfig(
        densities=densities,
        seeds=tuple(range(args.num_seeds)),
        scenario=scenario,
        workers=args.workers,
    )
    result = run_sweep(cfg)
    for err in result.errors:
        print(f"error at density={err.density} seed={err.seed}: {err.message}", file=sys.stderr)
    paths = report(result, args.format, args.out)
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_report(args) -> int:
    result = load_rows_csv(args.rows)
    paths = report(result, args.format, args.out)
    for p in paths:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetdiag",
        description="Two-tier network simulator and misconfiguration diagnosis experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", help="scenario YAML file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("layout", help="generate a network layout CSV")
    common(p)
    p.set_defaults(func=_cmd_layout)

    p = sub.add_parser("simulate", help="simulate epochs; emit instances and an event log")
    common(p)
    p.add_argument("--misconfig-fraction", type=float, default=0.4,
                   help="per-epoch fraction of misconfigured femtos (0 disables)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("analyze", help="trace analytics over an exported event log")
    common(p)
    p.add_argument("--log", required=True, help="event log (.jsonl) to analyze")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("sweep", help="full density sweep over the three architectures")
    common(p)
    p.add_argument("--densities", help="comma-separated femto counts (default 20,40,60,80,100)")
    p.add_argument("--num-seeds", type=int, default=10, help="number of seeds to average")
    p.add_argument("--workers", type=int, default=1, help="parallel (density, seed) jobs")
    p.add_argument("--format", default="csv", choices=["csv", "markdown-table", "plot-data"])
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="reformat sweep rows written by `sweep`")
    p.add_argument("--rows", required=True, help="sweep_rows.csv produced by the sweep")
    p.add_argument("--format", default="markdown-table", choices=["csv", "markdown-table", "plot-data"])
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 3
    except (HetdiagError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
