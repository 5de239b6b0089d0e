"""Batched streaming orchestration.

Each test batch flows through six phases:

  A  score every sample with the base detector and, when any cache holds
     entries, with the prototype score against the bank as of batch start;
  C  synthesize noise features (optional) and score them the same way;
  B  at t >= t_cold (caches non-empty), recompute the adaptive threshold
     alpha over this batch's dynamic scores — noise included, which is why
     noise generation runs first;
  D  admit samples (input order, real then noise) into the cache of their
     predicted class: cold-start batches compare the base score against
     theta, later batches compare the dynamic score against alpha;
  E  rebuild OOD prototypes from the caches (only classes whose cache
     changed are re-clustered; the result matches a full rebuild);
  F  emit per-sample scores: the prototype score against the rebuilt bank
     when any cache is non-empty, otherwise the base score. Noise samples
     are never emitted.

Phase A scoring is batched matrix work against an immutable bank snapshot;
phases B-F run on a single coordinator thread. State is never shared
mutably across threads.
"""

from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import backend, capture, refine
from .capture import CacheBank, Thresholds
from .errors import (
    DetectorInputMissing,
    DimensionMismatch,
    EmptyInput,
    InvalidConfig,
)
from .scoring import (
    PrototypeBank,
    ScoreConfig,
    energy_scores,
    msp_scores,
    normalize_rows,
)

DETECTOR_MSP = "msp"
DETECTOR_MCM = "mcm"
DETECTOR_ENERGY = "energy"
DETECTORS = (DETECTOR_MSP, DETECTOR_MCM, DETECTOR_ENERGY)

# Scores fed to the adaptive-threshold search must lie strictly inside
# (0, 1); prototype scores can round to exactly 1.0 when the OOD term
# underflows, so the alpha computation (only) sees clamped copies.
ALPHA_CLIP = 1e-12


@dataclass
class PipelineConfig:
    """Streaming run configuration. Defaults follow the reference setting:
    cache capacity 30, 5th-percentile cold-start threshold, OOD coefficient
    5, 5 cold-start batches, batch size 512."""

    m: int = 30
    beta: float = 5.0
    k_coef: float = 5.0
    t_cold: int = 5
    batch_size: int = 512
    tau: float = 1.0
    base_detector: str = DETECTOR_MCM
    mcm_tau: Optional[float] = None  # defaults to tau
    energy_temp: float = 1.0
    cluster: str = refine.STRATEGY_BIRCH
    birch_threshold: float = refine.DEFAULT_RADIUS_T
    birch_max_subclusters: int = refine.DEFAULT_MAX_SUBCLUSTERS
    cache_policy: str = capture.POLICY_FIFO
    cache_init: str = capture.INIT_EMPTY
    noise_per_batch: int = 0
    rng_seed: int = 0
    disable_caching: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise InvalidConfig(f"m must be >= 1, got {self.m}")
        if not (0.0 < self.beta < 100.0):
            raise InvalidConfig(f"beta must be in (0, 100), got {self.beta}")
        if not (self.k_coef > 0):
            raise InvalidConfig(f"k_coef must be > 0, got {self.k_coef}")
        if self.t_cold < 0:
            raise InvalidConfig(f"t_cold must be >= 0, got {self.t_cold}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.tau > 0):
            raise InvalidConfig(f"tau must be > 0, got {self.tau}")
        if self.mcm_tau is not None and not (self.mcm_tau > 0):
            raise InvalidConfig(f"mcm_tau must be > 0, got {self.mcm_tau}")
        if not (self.energy_temp > 0):
            raise InvalidConfig(f"energy_temp must be > 0, got {self.energy_temp}")
        if self.base_detector not in DETECTORS:
            raise InvalidConfig(f"unknown detector {self.base_detector!r}")
        if self.cluster not in refine.STRATEGIES:
            raise InvalidConfig(f"unknown cluster strategy {self.cluster!r}")
        if self.cache_policy not in capture.POLICIES:
            raise InvalidConfig(f"unknown cache policy {self.cache_policy!r}")
        if self.cache_init not in capture.INIT_STRATEGIES:
            raise InvalidConfig(f"unknown cache init {self.cache_init!r}")
        if self.noise_per_batch < 0:
            raise InvalidConfig("noise_per_batch must be >= 0")

    @property
    def effective_mcm_tau(self):
        return self.tau if self.mcm_tau is None else self.mcm_tau

    def score_config(self):
        return ScoreConfig(tau=self.tau, k_coef=self.k_coef)


@dataclass
class BatchResult:
    """Per-batch outcome: emitted scores for the real samples (noise is
    scored internally but never emitted), whether the prototype score was
    used, admissions performed (noise included), the alpha in effect, and
    the OOD prototype count after the rebuild."""

    scores: np.ndarray
    dyn_used: np.ndarray
    cached_count: int
    alpha_used: Optional[float]
    m_ood: int


@dataclass
class StreamLog:
    scores: np.ndarray
    batches: List[BatchResult] = field(default_factory=list)

    @property
    def alphas(self):
        return [b.alpha_used for b in self.batches]


@dataclass
class PipelineState:
    t: int
    caches: CacheBank
    bank: PrototypeBank
    thresholds: Thresholds
    seq_counter: int
    config: PipelineConfig
    dropped_subclusters: int = 0
    # per-class prototype lists so a batch only re-clusters caches it touched
    _class_protos: list = field(default_factory=list, repr=False)


def noise_features(rng_seed, batch_index, count, dim):
    """Unit-normalized isotropic Gaussian rows, deterministic per
    (rng_seed, batch_index) and independent of thread count."""
    rng = np.random.default_rng((0x6E015E, rng_seed, batch_index))
    return normalize_rows(rng.standard_normal((count, dim)))


def split_by_class(features, labels, n_classes=None):
    """Per-class row lists from a flat (features, labels) pair; labels must
    be non-negative class indices."""
    feats = np.asarray(features)
    labs = np.asarray(labels)
    if feats.shape[0] != labs.shape[0]:
        raise DimensionMismatch(
            f"{feats.shape[0]} rows but {labs.shape[0]} labels")
    if labs.size and labs.min() < 0:
        raise InvalidConfig("training labels must be >= 0")
    if n_classes is None:
        n_classes = int(labs.max()) + 1 if labs.size else 0
    return [feats[labs == c] for c in range(n_classes)]


def _theta_in_unit_interval(cfg, theta):
    """theta mapped into (0, 1) for use as an alpha fallback; MSP/MCM scores
    already live there, Energy is squashed through a logistic."""
    if cfg.base_detector == DETECTOR_ENERGY:
        theta = 1.0 / (1.0 + np.exp(-theta))
    return float(np.clip(theta, 1e-6, 1.0 - 1e-6))


class _Scorer:
    """Shared cosine work for one batch: the ID-cosine matrix is computed
    once and reused by the MCM base score, prototype prediction, and both
    prototype-score passes (only the OOD side changes after a rebuild)."""

    def __init__(self, cfg, bank, rows, logits):
        self.cfg = cfg
        self.bank = bank
        self.rows = rows
        self.logits = logits
        self.cos_id = rows @ bank.id_matrix.T

    def base_scores(self):
        cfg = self.cfg
        if cfg.base_detector == DETECTOR_MCM:
            return backend.kernels().softmax_max(
                self.cos_id / cfg.effective_mcm_tau)
        if self.logits is None:
            raise DetectorInputMissing(
                f"detector {cfg.base_detector!r} needs logits")
        if cfg.base_detector == DETECTOR_MSP:
            return msp_scores(self.logits)
        return energy_scores(self.logits, cfg.energy_temp)

    def dyn_scores(self, bank):
        cos_ood = self.rows @ bank.ood_matrix.T if bank.n_ood else None
        return backend.kernels().ratio_scores(
            self.cos_id, cos_ood, self.cfg.tau, self.cfg.k_coef)

    def predictions(self):
        if self.logits is not None:
            return np.argmax(self.logits, axis=1)
        return np.argmax(self.cos_id, axis=1)


def _check_logits(logits, n_rows, n_classes):
    if logits is None:
        return None
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != n_rows or z.shape[1] != n_classes:
        raise DimensionMismatch(
            f"logits shape {z.shape}, expected ({n_rows}, {n_classes})")
    return z


def initialize(id_train, id_train_logits, config, seed_features=None):
    """Build the starting state: ID prototypes from the per-class training
    features, theta from the base-detector scores of all training samples,
    and caches per the configured init strategy.

    id_train: per-class feature matrices. id_train_logits: matching
    per-class logit matrices, required by the MSP and Energy detectors.
    """
    cfg = config
    per_class = [normalize_rows(rows) for rows in id_train]
    id_protos = refine.build_id_prototypes(per_class)
    bank = PrototypeBank(id_protos)

    all_rows = np.concatenate(per_class)
    if id_train_logits is not None:
        logits = np.concatenate([np.asarray(z, dtype=np.float64)
                                 for z in id_train_logits])
        logits = _check_logits(logits, all_rows.shape[0], bank.n_classes)
    else:
        logits = None
    train_scores = _Scorer(cfg, bank, all_rows, logits).base_scores()
    theta = capture.calibrate_theta(train_scores, cfg.beta)

    seeds = None
    if seed_features is not None:
        seeds = [normalize_rows(np.asarray(rows, dtype=np.float64))
                 if len(rows) else [] for rows in seed_features]
    caches = capture.init_caches(cfg.cache_init, bank.n_classes, cfg.m,
                                 cfg.cache_policy, seeds)

    state = PipelineState(
        t=0, caches=caches, bank=bank,
        thresholds=Thresholds(theta=theta, beta=cfg.beta),
        seq_counter=0, config=cfg,
        _class_protos=[[] for _ in range(bank.n_classes)])
    if caches.any_nonempty():
        _rebuild(state, range(bank.n_classes))
    return state


def _rebuild(state, dirty_classes):
    """Re-cluster the named caches and publish the concatenated bank."""
    cfg = state.config
    for c in dirty_classes:
        protos, dropped = refine.cache_prototypes(
            state.caches.caches[c], c, cfg.cluster,
            cfg.birch_threshold, cfg.birch_max_subclusters)
        state._class_protos[c] = protos
        state.dropped_subclusters += dropped
    ood = [p for protos in state._class_protos for p in protos]
    state.bank = state.bank.with_ood(ood)


def process_batch(state, features, logits=None):
    """Run one batch through phases A-F; mutates state, returns the result."""
    cfg = state.config
    rows = normalize_rows(features)
    if rows.shape[0] == 0:
        raise EmptyInput("empty batch")
    if rows.shape[1] != state.bank.dim:
        raise DimensionMismatch(
            f"batch dimension {rows.shape[1]}, bank has {state.bank.dim}")
    logits = _check_logits(logits, rows.shape[0], state.bank.n_classes)
    n_real = rows.shape[0]

    scorer = _Scorer(cfg, state.bank, rows, logits)
    base = scorer.base_scores()

    if cfg.disable_caching:
        state.t += 1
        return BatchResult(scores=base,
                           dyn_used=np.zeros(n_real, dtype=bool),
                           cached_count=0, alpha_used=None,
                           m_ood=state.bank.n_ood)

    had_entries = state.caches.any_nonempty()
    dyn = scorer.dyn_scores(state.bank) if had_entries else None

    # Phase C before B: noise participates in the alpha computation.
    if cfg.noise_per_batch > 0:
        noise_rows = noise_features(cfg.rng_seed, state.t,
                                    cfg.noise_per_batch, state.bank.dim)
        noise_scorer = _Scorer(cfg, state.bank, noise_rows,
                               _pseudo_logits(cfg, noise_rows, state.bank))
        noise_base = noise_scorer.base_scores()
        noise_dyn = noise_scorer.dyn_scores(state.bank) if had_entries else None
        all_base = np.concatenate([base, noise_base])
        all_dyn = (np.concatenate([dyn, noise_dyn])
                   if had_entries else None)
        preds = np.concatenate([scorer.predictions(),
                                noise_scorer.predictions()])
        all_rows = np.concatenate([rows, noise_rows])
    else:
        all_base, all_dyn, preds, all_rows = base, dyn, scorer.predictions(), rows

    alpha_used = None
    if state.t >= cfg.t_cold and had_entries:
        fallback = (state.thresholds.alpha
                    if state.thresholds.alpha is not None
                    else _theta_in_unit_interval(cfg, state.thresholds.theta))
        clamped = np.clip(all_dyn, ALPHA_CLIP, 1.0 - ALPHA_CLIP)
        state.thresholds.alpha = capture.adaptive_alpha(clamped, fallback)
        alpha_used = state.thresholds.alpha

    cold = state.t < cfg.t_cold
    cached_count = 0
    dirty = set()
    for i in range(all_rows.shape[0]):
        if cold:
            admit = capture.should_cache(
                capture.PHASE_COLD_START, float(all_base[i]), None,
                state.thresholds)
            admission_score = float(all_base[i])
        else:
            if not had_entries:
                break  # no dynamic scores exist, so no adaptive admissions
            admit = capture.should_cache(
                capture.PHASE_ADAPTIVE, float(all_base[i]),
                float(all_dyn[i]), state.thresholds)
            admission_score = float(all_dyn[i])
        if admit:
            cls = int(preds[i])
            capture.cache_insert(state.caches, cls, all_rows[i],
                                 admission_score, state.seq_counter)
            state.seq_counter += 1
            dirty.add(cls)
            cached_count += 1

    if dirty:
        _rebuild(state, sorted(dirty))

    if state.caches.any_nonempty():
        emitted = scorer.dyn_scores(state.bank)
        dyn_used = np.ones(n_real, dtype=bool)
    else:
        emitted = base
        dyn_used = np.zeros(n_real, dtype=bool)

    state.t += 1
    return BatchResult(scores=emitted, dyn_used=dyn_used,
                       cached_count=cached_count, alpha_used=alpha_used,
                       m_ood=state.bank.n_ood)


def _pseudo_logits(cfg, rows, bank):
    """Stand-in logits for synthetic noise when the base detector needs
    them: cosines to the ID prototypes over the MCM temperature. Real
    logits do not exist for feature-space noise."""
    if cfg.base_detector == DETECTOR_MCM:
        return None
    return (rows @ bank.id_matrix.T) / cfg.effective_mcm_tau


def process_stream(state, feature_batches, logit_batches=None):
    """Fold process_batch over a batch sequence; the log preserves input
    order and keeps one BatchResult per batch."""
    feature_batches = list(feature_batches)
    if logit_batches is None:
        logit_batches = [None] * len(feature_batches)
    else:
        logit_batches = list(logit_batches)
        if len(logit_batches) != len(feature_batches):
            raise DimensionMismatch(
                f"{len(feature_batches)} feature batches but "
                f"{len(logit_batches)} logit batches")
    results = []
    for rows, logits in zip(feature_batches, logit_batches):
        results.append(process_batch(state, rows, logits))
    if results:
        scores = np.concatenate([r.scores for r in results])
    else:
        scores = np.zeros(0, dtype=np.float64)
    return state, StreamLog(scores=scores, batches=results)


def make_batches(features, logits, batch_size):
    """Slice flat arrays into consecutive batches (the last may be short)."""
    if batch_size < 1:
        raise InvalidConfig(f"batch_size must be >= 1, got {batch_size}")
    feats = np.asarray(features)
    n = feats.shape[0]
    feature_batches = [feats[i:i + batch_size] for i in range(0, n, batch_size)]
    if logits is None:
        return feature_batches, None
    z = np.asarray(logits)
    if z.shape[0] != n:
        raise DimensionMismatch(f"{n} rows but {z.shape[0]} logit rows")
    logit_batches = [z[i:i + batch_size] for i in range(0, n, batch_size)]
    return feature_batches, logit_batches
