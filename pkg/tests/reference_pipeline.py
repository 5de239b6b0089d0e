"""Straight-line, single-sample reference implementation of the streaming
detector, used as the oracle for pipeline equivalence.

Written independently of the package internals: per-sample scalar loops,
member-list clustering (no clustering-feature algebra), midpoint-candidate
threshold search (no prefix sums), plain list caches. The only package
import is the noise generator, which is shared test DATA, not algorithm.

Contract decisions mirrored here (they are part of the documented
behavior, not implementation accidents):
  - cold-start batches admit on base score < theta; later batches admit on
    dynamic score < alpha, and only when some cache was non-empty at batch
    start (otherwise no dynamic score exists and nothing is admitted);
  - alpha is recomputed per batch from that batch's dynamic scores (real
    samples in order, then noise), clamped into (0, 1); the fallback is
    the previous alpha, else theta mapped into (0, 1);
  - admissions store the score they were compared against; insertion order
    is sample order, real then noise; the admitted class is argmax logits
    when logits exist, else argmax cosine to the ID prototypes;
  - prototypes rebuild once per batch, caches visited in class order;
  - emitted scores use the rebuilt bank when any cache is non-empty, else
    the base score; noise is never emitted.
"""

import math

import numpy as np

from dynproto.pipeline import noise_features

from oracles import ref_candidate_alpha, ref_calibrate_theta


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / math.sqrt(float(np.dot(v, v)))


def _proto_score(v, id_protos, ood_protos, tau, k_coef):
    a = sum(math.exp(float(np.dot(v, p)) / tau) for p in id_protos)
    b = sum(math.exp(float(np.dot(v, p)) / tau) for p in ood_protos)
    return a / (a + k_coef * b)


def _mcm(v, anchors, tau):
    exps = [math.exp(float(np.dot(v, a)) / tau) for a in anchors]
    return max(exps) / sum(exps)


def _msp(z):
    exps = [math.exp(float(x)) for x in z]
    return max(exps) / sum(exps)


def _energy(z, temperature):
    return temperature * math.log(
        sum(math.exp(float(x) / temperature) for x in z))


def _argmax(values):
    best, best_v = 0, values[0]
    for i, x in enumerate(values):
        if x > best_v:
            best, best_v = i, x
    return best


class RefPipeline:
    """Single-sample reference run. Config is a plain dict with the same
    keys and defaults as the package's run configuration."""

    def __init__(self, train_per_class, train_logits_per_class, **cfg):
        self.m = cfg.get("m", 30)
        self.beta = cfg.get("beta", 5.0)
        self.k_coef = cfg.get("k_coef", 5.0)
        self.t_cold = cfg.get("t_cold", 5)
        self.tau = cfg.get("tau", 1.0)
        self.detector = cfg.get("base_detector", "mcm")
        self.mcm_tau = cfg.get("mcm_tau") or self.tau
        self.energy_temp = cfg.get("energy_temp", 1.0)
        self.policy = cfg.get("cache_policy", "fifo")
        self.cluster = cfg.get("cluster", "birch")
        self.noise_per_batch = cfg.get("noise_per_batch", 0)
        self.rng_seed = cfg.get("rng_seed", 0)
        self.birch_t = cfg.get("birch_threshold", 0.5)
        self.birch_b = cfg.get("birch_max_subclusters", 50)

        self.id_protos = []
        train_scores = []
        normed_per_class = []
        for rows in train_per_class:
            rows = [_unit(r) for r in np.asarray(rows, dtype=np.float64)]
            normed_per_class.append(rows)
            mean = np.mean(rows, axis=0)
            self.id_protos.append(_unit(mean))
        for c, rows in enumerate(normed_per_class):
            for i, v in enumerate(rows):
                z = (None if train_logits_per_class is None
                     else train_logits_per_class[c][i])
                train_scores.append(self._base(v, z))
        self.theta = ref_calibrate_theta(train_scores, self.beta)
        self.alpha = None
        self.caches = [[] for _ in self.id_protos]  # (vec, seq, score)
        self.ood_protos = []
        self.seq = 0
        self.t = 0
        self.dim = len(self.id_protos[0])

    # -- scoring ----------------------------------------------------------

    def _base(self, v, z):
        if self.detector == "mcm":
            return _mcm(v, self.id_protos, self.mcm_tau)
        if z is None:
            raise ValueError("detector needs logits")
        if self.detector == "msp":
            return _msp(z)
        return _energy(z, self.energy_temp)

    def _dyn(self, v):
        return _proto_score(v, self.id_protos, self.ood_protos,
                            self.tau, self.k_coef)

    def _predict(self, v, z):
        if z is not None:
            return _argmax([float(x) for x in z])
        return _argmax([float(np.dot(v, p)) for p in self.id_protos])

    # -- cache bookkeeping -------------------------------------------------

    def _insert(self, cls, v, score):
        cache = self.caches[cls]
        if self.policy == "fifo":
            cache.append((v, self.seq, score))
            if len(cache) > self.m:
                oldest = min(range(len(cache)), key=lambda i: cache[i][1])
                cache.pop(oldest)
        else:  # rh
            if len(cache) < self.m:
                cache.append((v, self.seq, score))
            else:
                worst = 0
                for i in range(1, len(cache)):
                    if cache[i][2] > cache[worst][2]:
                        worst = i
                if score < cache[worst][2]:
                    cache[worst] = (v, self.seq, score)
        self.seq += 1

    def _rebuild(self):
        self.ood_protos = []
        for cache in self.caches:
            if not cache:
                continue
            feats = [entry[0] for entry in cache]
            if self.cluster == "birch":
                clusters = self._birch(feats)
            elif self.cluster == "ap":
                clusters = [feats]
            else:  # none: every cached vector is its own prototype
                clusters = [[f] for f in feats]
            for members in clusters:
                centroid = np.mean(members, axis=0)
                norm = math.sqrt(float(np.dot(centroid, centroid)))
                if norm == 0.0:
                    continue
                self.ood_protos.append(centroid / norm)

    def _birch(self, feats):
        clusters = []
        t_sq = self.birch_t * self.birch_t
        for x in feats:
            best, best_d = None, None
            for i, members in enumerate(clusters):
                c = np.mean(members, axis=0)
                d = float(np.dot(x - c, x - c))
                if best_d is None or d < best_d:
                    best, best_d = i, d
            if best is not None:
                trial = clusters[best] + [x]
                c2 = np.mean(trial, axis=0)
                r_sq = float(np.mean([np.dot(y - c2, y - c2) for y in trial]))
                if r_sq <= t_sq:
                    clusters[best] = trial
                    continue
            if len(clusters) < self.birch_b:
                clusters.append([x])
            else:
                clusters[best] = clusters[best] + [x]
        return clusters

    # -- one batch ---------------------------------------------------------

    def _theta_unit(self):
        th = self.theta
        if self.detector == "energy":
            th = 1.0 / (1.0 + math.exp(-th))
        return min(max(th, 1e-6), 1.0 - 1e-6)

    def process_batch(self, rows, logits=None):
        rows = [_unit(r) for r in np.asarray(rows, dtype=np.float64)]
        zs = ([None] * len(rows) if logits is None
              else [np.asarray(z, dtype=np.float64) for z in logits])
        had_entries = any(self.caches)

        samples = []  # (v, z, is_real)
        for v, z in zip(rows, zs):
            samples.append((v, z, True))
        if self.noise_per_batch > 0:
            for v in noise_features(self.rng_seed, self.t,
                                    self.noise_per_batch, self.dim):
                z = None
                if self.detector != "mcm":
                    z = np.array([float(np.dot(v, p)) / self.mcm_tau
                                  for p in self.id_protos])
                samples.append((v, z, False))

        base = [self._base(v, z) for v, z, _ in samples]
        dyn = ([self._dyn(v) for v, _, _ in samples] if had_entries else None)

        if self.t >= self.t_cold and had_entries:
            fallback = self.alpha if self.alpha is not None else self._theta_unit()
            clamped = [min(max(s, 1e-12), 1.0 - 1e-12) for s in dyn]
            self.alpha = ref_candidate_alpha(clamped, fallback)

        for i, (v, z, _) in enumerate(samples):
            if self.t < self.t_cold:
                admit, score = base[i] < self.theta, base[i]
            elif had_entries:
                admit, score = dyn[i] < self.alpha, dyn[i]
            else:
                break
            if admit:
                self._insert(self._predict(v, z), v, score)

        self._rebuild()

        if any(self.caches):
            emitted = [self._dyn(v) for v, _, real in samples if real]
        else:
            emitted = [b for b, (_, _, real) in zip(base, samples) if real]
        self.t += 1
        return emitted

    def process_stream(self, feature_batches, logit_batches=None):
        if logit_batches is None:
            logit_batches = [None] * len(feature_batches)
        out = []
        for rows, logits in zip(feature_batches, logit_batches):
            out.extend(self.process_batch(rows, logits))
        return np.asarray(out, dtype=np.float64)
