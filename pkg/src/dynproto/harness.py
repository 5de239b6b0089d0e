"""Experiment orchestration: seeded stream assembly, scenario runs,
ablation families, imbalance sweeps, and the per-class cohesion statistic.

A scenario names a dataset, an ordering (one shuffled mix, or a sequence
of phases for drift runs), an ID:OOD ratio, a seed list, and pipeline
config overrides. Reports are a pure function of (spec, seeds): no
wall-clock fields, and seeds may run on any number of worker threads
without changing a byte of the output.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import dataio, pipeline
from .errors import (
    DatasetNotFound,
    InsufficientPool,
    InvalidConfig,
    InvalidSpec,
)
from .metrics import EvalReport, evaluate, similarity_delta
from .pipeline import PipelineConfig, initialize, make_batches, process_stream
from .refine import build_id_prototypes
from .scoring import PrototypeBank, normalize_rows, predict_classes

# stream assembly and cache seeding draw from fixed, purpose-salted streams
# so every consumer (tests, CLI, ablations) reproduces the same bytes
ASSEMBLY_SALT = 0xAB1E
CACHE_SEED_SALT = 0x5EED

ORDERING_SHUFFLED = "shuffled"


@dataclass(frozen=True)
class ScenarioSpec:
    """One experiment family: dataset, stream composition, seeds, config.

    ordering is either "shuffled" (one mixed stream) or a tuple of phases,
    each phase a tuple of OOD source indices streamed in order (drift).
    id_ood_ratio scales both pools to the largest subsets matching the
    ratio; sequence orderings always stream the full pools.
    """

    dataset: str = "desk64"
    ordering: Union[str, Tuple[Tuple[int, ...], ...]] = ORDERING_SHUFFLED
    ood_sources: Optional[Tuple[int, ...]] = None
    id_ood_ratio: Tuple[int, int] = (1, 1)
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5)
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        a, b = self.id_ood_ratio
        if a < 1 or b < 1:
            raise InvalidSpec(f"ratio components must be >= 1, got {a}:{b}")
        if not self.seeds:
            raise InvalidSpec("need at least one seed")
        if self.ordering != ORDERING_SHUFFLED:
            if len(self.ordering) < 1:
                raise InvalidSpec("sequence ordering needs >= 1 phase")
            if self.id_ood_ratio != (1, 1):
                raise InvalidSpec(
                    "sequence ordering streams full pools; ratio must be 1:1")

    def config(self):
        return PipelineConfig(**self.overrides)


@dataclass
class SeedResult:
    seed: int
    overall: EvalReport
    per_source: Dict[int, EvalReport]
    diagnostics: List[dict]
    final_alpha: Optional[float]
    theta: float
    # populated only when the caller asked to keep raw arrays
    scores: Optional[np.ndarray] = None
    stream_labels: Optional[np.ndarray] = None
    stream_sources: Optional[np.ndarray] = None


@dataclass
class RunReport:
    scenario: dict
    config: dict
    seeds: List[SeedResult]
    mean_fpr95: float
    mean_auroc: float
    source_mean_fpr95: Dict[int, float]
    source_mean_auroc: Dict[int, float]


_DATASETS = {"desk64": dataio.desk64_spec}
_dataset_cache = {}


def resolve_dataset(name):
    """Generated data for a registered dataset name (cached per process)."""
    if name not in _DATASETS:
        raise DatasetNotFound(
            f"unknown dataset {name!r}; known: {sorted(_DATASETS)}")
    if name not in _dataset_cache:
        _dataset_cache[name] = dataio.generate_synthetic(_DATASETS[name]())
    return _dataset_cache[name]


def desk64_scenario(**kw):
    """The standard acceptance scenario: desk-64 pools with the reference
    temperature; keyword arguments override ScenarioSpec fields and
    overrides merges rather than replaces."""
    overrides = {"tau": 0.05, **kw.pop("overrides", {})}
    return ScenarioSpec(dataset="desk64", overrides=overrides, **kw)


def _subsample(rng, pool, count):
    """Seeded subsample without replacement, original order preserved."""
    if count > pool.size:
        raise InsufficientPool(f"need {count} samples, pool has {pool.size}")
    if count == pool.size:
        return pool
    chosen = rng.choice(pool.size, size=count, replace=False)
    chosen.sort()
    return pool[chosen]


def ratio_counts(ratio, n_id_pool, n_ood_pool):
    """Largest (n_id, n_ood) with n_id:n_ood exactly equal to the ratio."""
    a, b = ratio
    units = min(n_id_pool // a, n_ood_pool // b)
    if units < 1:
        raise InsufficientPool(
            f"pools {n_id_pool} ID / {n_ood_pool} OOD cannot realize {a}:{b}")
    return a * units, b * units


def assemble_stream(data, spec, seed):
    """Indices into the test pool forming one seeded evaluation stream.

    Shuffled ordering: subsample both pools to the ratio, then one
    permutation of the union. Sequence ordering: the ID pool is permuted
    and split evenly across phases (earlier phases take the remainder);
    each phase is the permutation of its ID chunk plus the full pools of
    its OOD sources.
    """
    rng = np.random.default_rng((ASSEMBLY_SALT, seed))
    id_pool = np.flatnonzero(data.test_labels >= 0)

    if spec.ordering == ORDERING_SHUFFLED:
        if spec.ood_sources is None:
            ood_pool = np.flatnonzero(data.test_labels < 0)
        else:
            ood_pool = np.flatnonzero(np.isin(data.test_sources,
                                              spec.ood_sources))
        n_id, n_ood = ratio_counts(spec.id_ood_ratio, id_pool.size,
                                   ood_pool.size)
        ids = _subsample(rng, id_pool, n_id)
        oods = _subsample(rng, ood_pool, n_ood)
        return rng.permutation(np.concatenate([ids, oods]))

    phases = spec.ordering
    id_order = rng.permutation(id_pool)
    chunk_sizes = [id_pool.size // len(phases)] * len(phases)
    for i in range(id_pool.size % len(phases)):
        chunk_sizes[i] += 1
    out, start = [], 0
    for sizes, sources in zip(chunk_sizes, phases):
        chunk = id_order[start:start + sizes]
        start += sizes
        ood = np.flatnonzero(np.isin(data.test_sources, list(sources)))
        out.append(rng.permutation(np.concatenate([chunk, ood])))
    return np.concatenate(out)


def _cache_seed_features(seed, n_classes, dim):
    """One random unit vector per class for the seeded cache-init mode."""
    rng = np.random.default_rng((CACHE_SEED_SALT, seed))
    vecs = normalize_rows(rng.standard_normal((n_classes, dim)))
    return [vecs[c:c + 1] for c in range(n_classes)]


def _run_seed(data, spec, cfg, train_pc, train_logits_pc, seed, keep_scores):
    idx = assemble_stream(data, spec, seed)
    feats = data.test_features[idx]
    needs_logits = cfg.base_detector != pipeline.DETECTOR_MCM
    logits = data.test_logits[idx] if needs_logits else None

    seed_features = None
    if cfg.cache_init == "seeded":
        seed_features = _cache_seed_features(seed, len(train_pc),
                                             feats.shape[1])
    run_cfg = replace(cfg, rng_seed=seed)
    state = initialize(train_pc, train_logits_pc if needs_logits else None,
                       run_cfg, seed_features=seed_features)
    theta = state.thresholds.theta
    fb, lb = make_batches(feats, logits, run_cfg.batch_size)
    state, log = process_stream(state, fb, lb)

    labels = data.test_labels[idx]
    sources = data.test_sources[idx]
    id_scores = log.scores[labels >= 0]
    per_source = {}
    for s in sorted(int(s) for s in np.unique(sources[sources >= 0])):
        per_source[s] = evaluate(id_scores, log.scores[sources == s])
    overall = evaluate(id_scores, log.scores[labels < 0])
    diagnostics = [{"alpha": r.alpha_used, "m_ood": r.m_ood,
                    "cached_count": r.cached_count} for r in log.batches]
    return SeedResult(
        seed=seed, overall=overall, per_source=per_source,
        diagnostics=diagnostics, final_alpha=state.thresholds.alpha,
        theta=theta,
        scores=log.scores if keep_scores else None,
        stream_labels=labels if keep_scores else None,
        stream_sources=sources if keep_scores else None)


def run_scenario(spec, data=None, threads=1, keep_scores=False):
    """Run every seed of a scenario and aggregate the reports."""
    if data is None:
        data = resolve_dataset(spec.dataset)
    cfg = spec.config()
    n_classes = int(data.train_labels.max()) + 1
    train_pc = [data.train_features[data.train_labels == c]
                for c in range(n_classes)]
    train_logits_pc = [data.train_logits[data.train_labels == c]
                       for c in range(n_classes)]

    def one(seed):
        return _run_seed(data, spec, cfg, train_pc, train_logits_pc,
                         seed, keep_scores)

    if threads > 1 and len(spec.seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, spec.seeds))
    else:
        results = [one(seed) for seed in spec.seeds]

    # a heavily subsampled pool may miss a source entirely in some seeds;
    # each per-source mean covers only the seeds where that source appears
    sources = sorted({s for r in results for s in r.per_source})
    by_source = {s: [r.per_source[s] for r in results if s in r.per_source]
                 for s in sources}
    return RunReport(
        scenario=_spec_echo(spec),
        config=_config_echo(cfg),
        seeds=results,
        mean_fpr95=sum(r.overall.fpr95 for r in results) / len(results),
        mean_auroc=sum(r.overall.auroc for r in results) / len(results),
        source_mean_fpr95={
            s: sum(e.fpr95 for e in reps) / len(reps)
            for s, reps in by_source.items()},
        source_mean_auroc={
            s: sum(e.auroc for e in reps) / len(reps)
            for s, reps in by_source.items()},
    )


def _spec_echo(spec):
    return {
        "dataset": spec.dataset,
        "ordering": (spec.ordering if spec.ordering == ORDERING_SHUFFLED
                     else [list(p) for p in spec.ordering]),
        "ood_sources": (None if spec.ood_sources is None
                        else list(spec.ood_sources)),
        "id_ood_ratio": list(spec.id_ood_ratio),
        "seeds": list(spec.seeds),
        "overrides": dict(spec.overrides),
    }


def _config_echo(cfg):
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


# ---------------------------------------------------------------------------
# Ablations

ABLATION_AXES = {
    "copc_only": (False, True),
    "cluster": ("birch", "ap", "none"),
    "cache_init": ("empty", "seeded"),
    "cache_policy": ("fifo", "rh"),
    "k": (1.0, 5.0, 10.0),
    "m": (1, 30),
    "beta": (1.0, 5.0, 10.0),
    "t_cold": (0, 5, 10),
}

_AXIS_KEYS = {
    "cluster": "cluster",
    "cache_init": "cache_init",
    "cache_policy": "cache_policy",
    "k": "k_coef",
    "m": "m",
    "beta": "beta",
    "t_cold": "t_cold",
}


def run_ablation(spec, axis, values=None, data=None, threads=1,
                 keep_scores=False):
    """One RunReport per axis value, keyed by the value's string form.

    copc_only=True replaces the refine step with the identity (every
    cached feature is its own prototype); every other axis is a plain
    config sweep.
    """
    if axis not in ABLATION_AXES:
        raise InvalidConfig(
            f"unknown ablation axis {axis!r}; known: {sorted(ABLATION_AXES)}")
    if values is None:
        values = ABLATION_AXES[axis]
    reports = {}
    for value in values:
        if axis == "copc_only":
            value = bool(value)
            overrides = dict(spec.overrides)
            if value:
                overrides["cluster"] = "none"
        else:
            overrides = {**spec.overrides, _AXIS_KEYS[axis]: value}
        sub = replace(spec, overrides=overrides)
        reports[str(value)] = run_scenario(sub, data=data, threads=threads,
                                           keep_scores=keep_scores)
    return reports


def run_imbalance(spec, ratios, noise_options, data=None, threads=1):
    """Grid of reports over ratio x noise_per_batch settings."""
    table = {}
    for ratio in ratios:
        a, b = ratio
        row = {}
        for noise in noise_options:
            sub = replace(spec, id_ood_ratio=(a, b),
                          overrides={**spec.overrides,
                                     "noise_per_batch": int(noise)})
            row[int(noise)] = run_scenario(sub, data=data, threads=threads)
        table[f"{a}:{b}"] = row
    return table


# ---------------------------------------------------------------------------
# Per-class cohesion statistic

def hypothesis_statistic(data, confusable_sources, overrides=None, seed=1):
    """Per-class Delta between cached-like and evasive OOD samples.

    Runs one shuffled full stream, splits the confusable-source OOD
    samples at the final adaptive threshold (fallback: theta mapped into
    the unit interval), groups them by predicted class, and compares mean
    cosines: (detected vs undetected OOD) minus (detected OOD vs true-ID
    of that class). Returns {"cutoff", "deltas", "median"}.
    """
    spec = ScenarioSpec(dataset="desk64", seeds=(seed,),
                        overrides=dict(overrides or {}))
    cfg = spec.config()
    n_classes = int(data.train_labels.max()) + 1
    train_pc = [data.train_features[data.train_labels == c]
                for c in range(n_classes)]
    train_logits_pc = [data.train_logits[data.train_labels == c]
                       for c in range(n_classes)]
    result = _run_seed(data, spec, cfg, train_pc, train_logits_pc, seed,
                       keep_scores=True)

    if result.final_alpha is not None:
        cutoff = float(result.final_alpha)
    else:
        cutoff = pipeline._theta_in_unit_interval(cfg, result.theta)

    idx = assemble_stream(data, spec, seed)
    rows = normalize_rows(data.test_features[idx])
    labels, sources, scores = (result.stream_labels, result.stream_sources,
                               result.scores)
    conf = (labels < 0) & np.isin(sources, list(confusable_sources))
    bank = PrototypeBank(build_id_prototypes(
        [normalize_rows(rows_c) for rows_c in train_pc]))
    preds = np.full(labels.shape, -1)
    if conf.any():
        preds[conf] = predict_classes(rows[conf], bank)

    groups = {}
    for c in range(n_classes):
        mask = conf & (preds == c)
        detected = rows[mask & (scores < cutoff)]
        undetected = rows[mask & (scores >= cutoff)]
        id_feats = rows[labels == c]
        groups[c] = (detected, undetected, id_feats)
    deltas = similarity_delta(groups)
    median = float(np.median(list(deltas.values()))) if deltas else float("nan")
    return {"cutoff": cutoff, "deltas": deltas, "median": median}
