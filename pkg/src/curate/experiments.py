"""Experiment scenarios: reference bootstrapping, selection policies, CSV.

A run always follows the same protocol: train a reference model IID on the
curated pool, cache its embeddings of the uncurated pool on disk, then train
a learner on the uncurated pool under the scenario's selection policy.
Scenarios other than the IID baseline also run a matched IID baseline leg so
the summary can report steps-to-baseline and FLOPs-to-baseline.

CSV schema (one row per training step, stable column order):

    scenario,seed,step,loss,mean_selected_score,eval_i2t_top1,
    eval_t2i_top1,cumulative_flops,skipped
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .configio import ConfigError, SectionReader, Sections
from .contrastive import SIGMOID, SOFTMAX
from .data import DatasetBundle, PairedDataset, SyntheticDatasetSpec, generate_dataset
from .flops import COST_FLEXI, COST_IID, COST_JEST
from .sampling import SelectionConfig
from .scoring import (
    EASY_REF,
    HARD_LEARNER,
    LEARNABILITY,
    ReferenceCache,
    read_reference_cache,
    write_reference_cache,
)
from .training import (
    APPROX_MODES,
    POLICY_INDEPENDENT,
    POLICY_JOINT,
    POLICY_UNIFORM,
    DualEncoderParams,
    TrainConfig,
    TrainMetrics,
    encode,
    evaluate,
    init_dual_encoder,
    init_train_state,
    train_step,
)

SCENARIO_IID = "iid_baseline"
SCENARIO_JEST = "jest"
SCENARIO_FLEXI = "flexi_jest"
SCENARIO_EASY_REF = "easy_ref"
SCENARIO_HARD_LEARNER = "hard_learner"
SCENARIO_INDEPENDENT = "independent"
SCENARIO_RAW_VS_FILTERED = "raw_vs_filtered"
SCENARIOS = (
    SCENARIO_IID,
    SCENARIO_JEST,
    SCENARIO_FLEXI,
    SCENARIO_EASY_REF,
    SCENARIO_HARD_LEARNER,
    SCENARIO_INDEPENDENT,
    SCENARIO_RAW_VS_FILTERED,
)

CSV_COLUMNS = (
    "scenario",
    "seed",
    "step",
    "loss",
    "mean_selected_score",
    "eval_i2t_top1",
    "eval_t2i_top1",
    "cumulative_flops",
    "skipped",
)

TRAILING_WINDOW = 5

DEFAULT_EMBED_DIM = 16


@dataclass(frozen=True)
class ReferenceTrainConfig:
    """IID pretraining budget for the reference model."""

    steps: int = 150
    batch_size: int = 64
    learning_rate: float = 0.02

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("reference steps and batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("reference learning_rate must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    """One scenario bound to a dataset, a trainer setup, and an output dir."""

    scenario: str
    dataset: SyntheticDatasetSpec
    train: TrainConfig
    output_dir: str
    reference: ReferenceTrainConfig = ReferenceTrainConfig()
    embed_dim: int = DEFAULT_EMBED_DIM

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(
                f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}"
            )
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be >= 1, got {self.embed_dim}")


def scenario_train_config(scenario: str, base: TrainConfig) -> TrainConfig:
    """Specialize the base trainer config for one scenario."""
    if scenario == SCENARIO_IID:
        return replace(
            base,
            super_batch_size=base.sub_batch_size,
            selection_policy=POLICY_UNIFORM,
            approx_scoring=False,
            cost_kind=COST_IID,
        )
    if scenario in (SCENARIO_JEST, SCENARIO_RAW_VS_FILTERED):
        return replace(
            base,
            selection_policy=POLICY_JOINT,
            selection=replace(base.selection, method=LEARNABILITY),
            approx_scoring=False,
            cost_kind=COST_JEST,
        )
    if scenario == SCENARIO_FLEXI:
        approx_fraction = base.approx_fraction if base.approx_fraction > 0 else 0.5
        return replace(
            base,
            selection_policy=POLICY_JOINT,
            selection=replace(base.selection, method=LEARNABILITY),
            approx_scoring=True,
            approx_fraction=approx_fraction,
            cost_kind=COST_FLEXI,
        )
    if scenario == SCENARIO_EASY_REF:
        return replace(
            base,
            selection_policy=POLICY_JOINT,
            selection=replace(base.selection, method=EASY_REF),
            approx_scoring=False,
            cost_kind=COST_JEST,
        )
    if scenario == SCENARIO_HARD_LEARNER:
        return replace(
            base,
            selection_policy=POLICY_JOINT,
            selection=replace(base.selection, method=HARD_LEARNER),
            approx_scoring=False,
            cost_kind=COST_JEST,
        )
    if scenario == SCENARIO_INDEPENDENT:
        return replace(
            base,
            selection_policy=POLICY_INDEPENDENT,
            selection=replace(base.selection, method=LEARNABILITY),
            approx_scoring=False,
            cost_kind=COST_JEST,
        )
    raise ValueError(f"unknown scenario {scenario!r}")


def config_from_sections(sections: Sections, path: str | Path = "") -> ExperimentConfig:
    """Build an ExperimentConfig from parsed config sections.

    Unknown sections or keys are configuration errors, not warnings.
    """
    known = {"experiment", "dataset", "reference", "train", "selection"}
    unknown = sorted(set(sections) - known)
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}")

    experiment = SectionReader("experiment", sections.get("experiment"))
    scenario = experiment.get_str("scenario")
    output_dir = experiment.get_str("output_dir", "runs")
    embed_dim = experiment.get_int("embed_dim", DEFAULT_EMBED_DIM)
    experiment.check_consumed()
    if scenario not in SCENARIOS:
        raise ConfigError(
            f"unknown scenario {scenario!r}; expected one of {SCENARIOS}"
        )

    dataset_reader = SectionReader("dataset", sections.get("dataset"))
    dataset = SyntheticDatasetSpec(
        latent_dim=dataset_reader.get_int("latent_dim", 8),
        input_dim=dataset_reader.get_int("input_dim", 32),
        n_concepts=dataset_reader.get_int("n_concepts", 16),
        noise_rate=dataset_reader.get_float("noise_rate", 0.5),
        curated_size=dataset_reader.get_int("curated_size", 1024),
        uncurated_size=dataset_reader.get_int("uncurated_size", 4096),
        holdout_size=dataset_reader.get_int("holdout_size", 512),
        seed=dataset_reader.get_int("seed", 0),
    )
    dataset_reader.check_consumed()

    reference_reader = SectionReader("reference", sections.get("reference"))
    reference = ReferenceTrainConfig(
        steps=reference_reader.get_int("steps", 150),
        batch_size=reference_reader.get_int("batch_size", 64),
        learning_rate=reference_reader.get_float("learning_rate", 0.02),
    )
    reference_reader.check_consumed()

    selection_reader = SectionReader("selection", sections.get("selection"))
    selection = SelectionConfig(
        n_chunks=selection_reader.get_int("n_chunks", 16),
        method=selection_reader.get_str("method", LEARNABILITY),
        gain=selection_reader.get_float("gain", 100.0),
    )
    selection_reader.check_consumed()

    train_reader = SectionReader("train", sections.get("train"))
    loss_kind = train_reader.get_str("loss_kind", SIGMOID)
    if loss_kind not in (SIGMOID, SOFTMAX):
        raise ConfigError(f"[train] loss_kind must be sigmoid or softmax, got {loss_kind!r}")
    approx_mode = train_reader.get_str("approx_mode", "resize")
    if approx_mode not in APPROX_MODES:
        raise ConfigError(f"[train] unknown approx_mode {approx_mode!r}")
    train = TrainConfig(
        steps=train_reader.get_int("steps", 240),
        super_batch_size=train_reader.get_int("super_batch_size", 320),
        sub_batch_size=train_reader.get_int("sub_batch_size", 64),
        selection=selection,
        loss_kind=loss_kind,
        approx_fraction=train_reader.get_float("approx_fraction", 0.0),
        approx_factor=train_reader.get_float("approx_factor", 0.28),
        approx_mode=approx_mode,
        learning_rate=train_reader.get_float("learning_rate", 0.02),
        warmup_fraction=train_reader.get_float("warmup_fraction", 0.01),
        adam_beta1=train_reader.get_float("adam_beta1", 0.9),
        adam_beta2=train_reader.get_float("adam_beta2", 0.95),
        weight_decay=train_reader.get_float("weight_decay", 1e-4),
        grad_clip_norm=train_reader.get_float("grad_clip_norm", 1.0),
        reweight_selected=train_reader.get_bool("reweight_selected", False),
    )
    train_reader.check_consumed()

    try:
        cfg = ExperimentConfig(
            scenario=scenario,
            dataset=dataset,
            train=train,
            output_dir=output_dir,
            reference=reference,
            embed_dim=embed_dim,
        )
        # Validate the scenario-specialized trainer config now, so bad
        # combinations fail at load time with a ConfigError.
        scenario_train_config(scenario, train)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    from .configio import load_config

    return config_from_sections(load_config(path), path)


def format_metrics_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(
    path: str | Path, rows: list[tuple[str, int, TrainMetrics]]
) -> None:
    """Write (scenario, seed, metrics) rows in the stable CSV schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for scenario, seed, m in rows:
            writer.writerow(
                [
                    scenario,
                    str(seed),
                    str(m.step),
                    format_metrics_value(m.loss),
                    format_metrics_value(m.mean_selected_score),
                    format_metrics_value(m.eval_i2t_top1),
                    format_metrics_value(m.eval_t2i_top1),
                    format_metrics_value(m.cumulative_flops),
                    format_metrics_value(m.skipped),
                ]
            )


def trailing_mean(values: list[float], window: int = TRAILING_WINDOW) -> list[float]:
    """Trailing mean over up to ``window`` previous values, per position."""
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out.append(float(np.mean(values[lo : i + 1])))
    return out


def steps_to_reach(
    eval_curve: list[float], target: float, window: int = TRAILING_WINDOW
) -> int | None:
    """First step count whose trailing-mean eval meets the target."""
    smoothed = trailing_mean(eval_curve, window)
    for i, value in enumerate(smoothed):
        if value >= target:
            return i + 1
    return None


def run_training(
    learner: DualEncoderParams,
    cfg: TrainConfig,
    pool: PairedDataset,
    cache: ReferenceCache | None,
    holdout: PairedDataset,
    rng: np.random.Generator,
) -> tuple[DualEncoderParams, list[TrainMetrics]]:
    """Run cfg.steps selection+update steps over a candidate pool."""
    if pool.size < cfg.super_batch_size:
        raise ValueError(
            f"pool of {pool.size} items cannot fill super-batches of "
            f"{cfg.super_batch_size}"
        )
    state = init_train_state(learner, cfg)
    holdout_inputs = (holdout.image_inputs, holdout.text_inputs)
    rows: list[TrainMetrics] = []
    for _ in range(cfg.steps):
        batch_idx = rng.choice(pool.size, size=cfg.super_batch_size, replace=False)
        batch_cache = cache.take(batch_idx) if cache is not None else None
        inputs = (pool.image_inputs[batch_idx], pool.text_inputs[batch_idx])
        learner, state, metrics = train_step(
            learner, batch_cache, inputs, cfg, state, rng
        )
        i2t, t2i = evaluate(learner, holdout_inputs)
        rows.append(replace(metrics, eval_i2t_top1=i2t, eval_t2i_top1=t2i))
    return learner, rows


def train_reference(
    curated: PairedDataset,
    holdout: PairedDataset,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
) -> DualEncoderParams:
    """Plain IID pretraining of the reference model on the curated pool."""
    ref_cfg = TrainConfig(
        steps=cfg.reference.steps,
        super_batch_size=cfg.reference.batch_size,
        sub_batch_size=cfg.reference.batch_size,
        selection=SelectionConfig(n_chunks=1),
        selection_policy=POLICY_UNIFORM,
        loss_kind=cfg.train.loss_kind,
        cost_kind=COST_IID,
        learning_rate=cfg.reference.learning_rate,
        warmup_fraction=cfg.train.warmup_fraction,
        adam_beta1=cfg.train.adam_beta1,
        adam_beta2=cfg.train.adam_beta2,
        weight_decay=cfg.train.weight_decay,
        grad_clip_norm=cfg.train.grad_clip_norm,
    )
    reference = init_dual_encoder(curated.image_inputs.shape[1], cfg.embed_dim, rng)
    reference, _ = run_training(reference, ref_cfg, curated, None, holdout, rng)
    return reference


def build_reference_cache(
    reference: DualEncoderParams, pool: PairedDataset
) -> ReferenceCache:
    """Encode the whole candidate pool once with the frozen reference."""
    batch = encode(reference, (pool.image_inputs, pool.text_inputs))
    return ReferenceCache(
        batch.image_embeds.astype(np.float32),
        batch.text_embeds.astype(np.float32),
        reference.head,
    )


def _leg_specs(cfg: ExperimentConfig, bundle: DatasetBundle) -> list[tuple[str, str, PairedDataset]]:
    """(leg name, scenario for trainer knobs, pool) triples for this run."""
    if cfg.scenario == SCENARIO_RAW_VS_FILTERED:
        filtered = bundle.uncurated.aligned_subset()
        return [
            ("jest_raw", SCENARIO_JEST, bundle.uncurated),
            ("jest_filtered", SCENARIO_JEST, filtered),
        ]
    if cfg.scenario == SCENARIO_IID:
        return [(SCENARIO_IID, SCENARIO_IID, bundle.uncurated)]
    return [(cfg.scenario, cfg.scenario, bundle.uncurated)]


def run_experiment(
    cfg: ExperimentConfig,
    seed: int | None = None,
    output_dir: str | Path | None = None,
) -> dict:
    """Run one scenario end to end; writes metrics.csv and summary.txt.

    Returns the summary mapping.  Reruns with the same config and seed
    produce byte-identical outputs.
    """
    seed = cfg.dataset.seed if seed is None else int(seed)
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    seeds = np.random.SeedSequence(seed).spawn(4)
    data_rng = np.random.default_rng(seeds[0])
    init_rng = np.random.default_rng(seeds[1])
    reference_rng = np.random.default_rng(seeds[2])
    leg_root = seeds[3]

    bundle = generate_dataset(replace(cfg.dataset, seed=seed), data_rng)
    reference = train_reference(bundle.curated, bundle.holdout, cfg, reference_rng)

    cache = build_reference_cache(reference, bundle.uncurated)
    cache_path = out / "reference_embeddings.bin"
    write_reference_cache(cache, cache_path)
    cache = read_reference_cache(cache_path)

    learner_init = init_dual_encoder(
        cfg.dataset.input_dim, cfg.embed_dim, init_rng
    )

    legs = _leg_specs(cfg, bundle)
    needs_baseline = cfg.scenario != SCENARIO_IID
    if needs_baseline:
        legs = legs + [(SCENARIO_IID, SCENARIO_IID, bundle.uncurated)]

    all_rows: list[tuple[str, int, TrainMetrics]] = []
    leg_rows: dict[str, list[TrainMetrics]] = {}
    leg_seeds = leg_root.spawn(len(legs))
    for (leg_name, leg_scenario, pool), leg_seed in zip(legs, leg_seeds):
        leg_cfg = scenario_train_config(leg_scenario, cfg.train)
        leg_rng = np.random.default_rng(leg_seed)
        leg_cache = None
        if leg_cfg.selection_policy != POLICY_UNIFORM:
            if pool is bundle.uncurated:
                leg_cache = cache
            else:
                # Filtered pool rows are the aligned uncurated rows, in order.
                leg_cache = cache.take(np.flatnonzero(bundle.uncurated.aligned))
        try:
            _, rows = run_training(
                learner_init, leg_cfg, pool, leg_cache, bundle.holdout, leg_rng
            )
        except ValueError as exc:
            raise ValueError(f"scenario {cfg.scenario!r}, leg {leg_name!r}: {exc}") from exc
        leg_rows[leg_name] = rows
        all_rows.extend((leg_name, seed, m) for m in rows)

    csv_path = out / "metrics.csv"
    write_metrics_csv(csv_path, all_rows)

    summary: dict = {"scenario": cfg.scenario, "seed": seed}
    for leg_name, rows in leg_rows.items():
        i2t = [m.eval_i2t_top1 for m in rows]
        summary[f"{leg_name}.final_eval_i2t_top1"] = trailing_mean(i2t)[-1]
        summary[f"{leg_name}.final_eval_t2i_top1"] = trailing_mean(
            [m.eval_t2i_top1 for m in rows]
        )[-1]
        summary[f"{leg_name}.final_loss"] = rows[-1].loss
        summary[f"{leg_name}.total_flops"] = rows[-1].cumulative_flops
        summary[f"{leg_name}.skipped_steps"] = sum(m.skipped for m in rows)
    if needs_baseline:
        baseline_rows = leg_rows[SCENARIO_IID]
        baseline_final = trailing_mean(
            [m.eval_i2t_top1 for m in baseline_rows]
        )[-1]
        summary["baseline_final_eval_i2t_top1"] = baseline_final
        summary["baseline_steps"] = len(baseline_rows)
        for leg_name, _, _ in _leg_specs(cfg, bundle):
            rows = leg_rows[leg_name]
            reached = steps_to_reach(
                [m.eval_i2t_top1 for m in rows], baseline_final
            )
            summary[f"{leg_name}.steps_to_baseline"] = reached
            summary[f"{leg_name}.flops_to_baseline"] = (
                rows[reached - 1].cumulative_flops if reached is not None else None
            )
    if cfg.scenario == SCENARIO_RAW_VS_FILTERED:
        summary["raw_minus_filtered_final_i2t"] = (
            summary["jest_raw.final_eval_i2t_top1"]
            - summary["jest_filtered.final_eval_i2t_top1"]
        )

    summary_path = out / "summary.txt"
    lines = []
    for key, value in summary.items():
        if isinstance(value, (float, bool)):
            lines.append(f"{key} = {format_metrics_value(value)}")
        else:
            lines.append(f"{key} = {value}")
    summary_path.write_text("\n".join(lines) + "\n")
    return summary
