"""
candidate.py

The candidate space C = {(Y, psi, rho, T)}: conditioning bases (partitions of
the observation alphabet), resolutions, IB-built encoders with Bayes decoders,
admissibility gaps, phase points, coarse labels, constraint sequences and the
low-dimensional reconstruction error of an r field.

Phase points are keyed "target/basis/resolution", the same strings the agent
profiles use.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.decomposition import PCA

from probkit import Channel, IBOptions, JointDist, _mi, bayes_decoder, ib_solve, kl_rowwise

logger = logging.getLogger(__name__)

# -------- CONFIGURATION --------
DEFAULT_EPSILON = 0.05    # nats; admissible iff gap <= epsilon
DOMAINS = ("empirical", "ideational", "structural", "existential")
DIRECTIONS = ("explorative", "stabilizing")
HORIZONS = ("fine", "coarse")
DEFAULT_DIRECTIONS = {"fine": "stabilizing", "coarse": "explorative"}
ZERO_VARIANCE = 1e-12
# --------------------------------


class UnlabeledPhaseError(ValueError):
    pass


def phase_key(target, basis, resolution):
    return f"{target}/{basis}/{resolution}"


def stable_seed(seed, *names):
    """Integer seed derived from a base seed and names, independent of registry order."""
    digest = hashlib.sha256("/".join(names).encode("utf-8")).digest()
    words = [seed, int.from_bytes(digest[:8], "little")]
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0])


## -------------------------------------------------------------- ##
## Registries ##

@dataclass(frozen=True)
class ConditioningBasis:
    id: str
    map: tuple

    def __post_init__(self):
        mapping = tuple(int(v) for v in self.map)
        if not mapping or min(mapping) < 0:
            raise ValueError(f"basis '{self.id}' needs a non-empty map of non-negative features")
        object.__setattr__(self, "map", mapping)

    @property
    def feature_size(self):
        return max(self.map) + 1

    def check(self, obs_size):
        if len(self.map) != obs_size:
            raise ValueError(f"basis '{self.id}' covers {len(self.map)} observations, world has {obs_size}")
        if self.feature_size > obs_size:
            raise ValueError(f"basis '{self.id}' has more features than observations")

    @classmethod
    def identity(cls, n, basis_id="identity"):
        return cls(basis_id, tuple(range(n)))

    @classmethod
    def constant(cls, n, basis_id="constant"):
        return cls(basis_id, (0,) * n)


@dataclass(frozen=True)
class Resolution:
    id: str
    cardinality: int
    beta: float
    horizon_tag: str = "fine"

    def __post_init__(self):
        if self.cardinality < 1:
            raise ValueError(f"resolution '{self.id}': cardinality must be at least 1")
        if self.beta < 0:
            raise ValueError(f"resolution '{self.id}': beta must be non-negative")
        if self.horizon_tag not in HORIZONS:
            raise ValueError(f"resolution '{self.id}': horizon must be one of {HORIZONS}")


@dataclass(frozen=True)
class PhasePoint:
    target: str
    basis: str
    resolution: str
    horizon_tag: str
    admissible: bool = True

    @property
    def key(self):
        return phase_key(self.target, self.basis, self.resolution)


@dataclass(frozen=True)
class Diagnostics:
    gap: float
    i_ot: float
    i_ty: float


## -------------------------------------------------------------- ##
## Candidates ##

@dataclass(frozen=True, eq=False)
class Candidate:
    target: str
    basis: ConditioningBasis
    resolution: Resolution
    encoder: Channel             # feature -> representation
    decoder: np.ndarray          # representation -> p(Y|t)
    diagnostics: Diagnostics
    joint_ty: np.ndarray         # p(T, Y)
    predictive: np.ndarray       # observation -> decoder-induced p(Y|o)
    converged: bool = True

    @property
    def key(self):
        return phase_key(self.target, self.basis.id, self.resolution.id)

    @property
    def gap(self):
        return self.diagnostics.gap

    @property
    def cardinality(self):
        return self.encoder.n_out

    @property
    def deterministic(self):
        return self.encoder.is_deterministic

    @property
    def obs_encoder(self):
        """q(t|o) = encoder row of psi(o)."""
        return self.encoder.rows[list(self.basis.map)]

    def phase_point(self, admissible=True):
        return PhasePoint(self.target, self.basis.id, self.resolution.id,
                          self.resolution.horizon_tag, admissible)


def _gap(p_o, posterior, predictive):
    live = p_o > 0
    kl = kl_rowwise(posterior[live], predictive[live])
    return math.fsum((p_o[live] * kl).tolist())


def candidate_from_encoder(w, target, basis, resolution, encoder, converged=True):
    """Attach Bayes decoder and diagnostics to a feature-level encoder."""
    basis.check(w.obs_size)
    enc = encoder.rows if isinstance(encoder, Channel) else np.asarray(encoder, dtype=float)
    if enc.shape[0] != basis.feature_size:
        raise ValueError(f"encoder has {enc.shape[0]} rows, basis '{basis.id}' has {basis.feature_size} features")
    p_oy = w.target_joints[target]
    p_o = p_oy.sum(axis=1)
    posterior = w.posterior_table(target)
    obs_enc = enc[list(basis.map)]
    decoder = bayes_decoder(p_o, posterior, obs_enc)
    joint_ty = obs_enc.T @ p_oy
    predictive = obs_enc @ decoder
    diag = Diagnostics(
        gap=_gap(p_o, posterior, predictive),
        i_ot=_mi(p_o[:, None] * obs_enc),
        i_ty=_mi(joint_ty),
    )
    for arr in (decoder, joint_ty, predictive):
        arr.setflags(write=False)
    return Candidate(target, basis, resolution, Channel(enc), decoder, diag, joint_ty, predictive, converged)


def build_encoder(w, target, basis, resolution, seed, opts=None):
    """Run the IB on p(psi(O), Y) at the resolution's (cardinality, beta)."""
    basis.check(w.obs_size)
    p_oy = w.target_joints[target]
    p_fy = np.zeros((basis.feature_size, p_oy.shape[1]))
    np.add.at(p_fy, list(basis.map), p_oy)
    res = ib_solve(JointDist(p_fy, "F", target), resolution.cardinality, resolution.beta, opts, seed)
    if not res.converged:
        logger.warning("[candidate] %s flagged non-converged", phase_key(target, basis.id, resolution.id))
    return candidate_from_encoder(w, target, basis, resolution, res.encoder, res.converged)


def harden(w, c):
    """Replace the encoder by its row-wise argmax."""
    mapping = c.encoder.mapping()
    enc = Channel.from_mapping(mapping, c.cardinality)
    return candidate_from_encoder(w, c.target, c.basis, c.resolution, enc, c.converged)


def admissibility_gap(w, c):
    """E_o KL(p(Y|o) || decoder-induced p(Y|o)) by exact summation."""
    p_o = w.target_joints[c.target].sum(axis=1)
    return _gap(p_o, w.posterior_table(c.target), c.predictive)


def pointwise_errors(w, c):
    """Per-observation KL(p(Y|o) || decoder-induced p(Y|o)); +inf on support violation."""
    return kl_rowwise(w.posterior_table(c.target), c.predictive)


## -------------------------------------------------------------- ##
## Candidate space ##

@dataclass(frozen=True, eq=False)
class CandidateSpace:
    candidates: tuple
    epsilon: float
    phase_points: tuple
    _by_key: dict = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_key", {c.key: c for c in self.candidates})

    def __len__(self):
        return len(self.candidates)

    def get(self, key):
        return self._by_key[key]

    def __contains__(self, key):
        return key in self._by_key

    def admissible(self):
        return [c for c, pt in zip(self.candidates, self.phase_points) if pt.admissible]

    def admissible_keys(self):
        return [pt.key for pt in self.phase_points if pt.admissible]

    @property
    def keys(self):
        return [pt.key for pt in self.phase_points]


def enumerate_candidate_space(w, bases, targets, resolutions, epsilon=DEFAULT_EPSILON, seed=0,
                              opts=None, cache=None):
    """
    Build every (target, basis, resolution) candidate in that nesting order.

    cache, when given, is a dict shared between agents; entries are keyed by
    phase key, solver options and seed so equal requests reuse one build.
    """
    opts = opts or IBOptions()
    cache = {} if cache is None else cache
    candidates, points = [], []
    for target in targets:
        for basis in bases:
            for res in resolutions:
                key = phase_key(target, basis.id, res.id)
                cache_key = (w.name, key, opts, seed)
                c = cache.get(cache_key)
                if c is None:
                    c = build_encoder(w, target, basis, res, stable_seed(seed, key), opts)
                    cache[cache_key] = c
                candidates.append(c)
                points.append(c.phase_point(c.gap <= epsilon))
    kept = sum(pt.admissible for pt in points)
    logger.info("[candidate_space] kept %d/%d candidates at epsilon=%g", kept, len(points), epsilon)
    return CandidateSpace(tuple(candidates), float(epsilon), tuple(points))


## -------------------------------------------------------------- ##
## Coarse labels, constraint sequences, reconstruction error ##

@dataclass(frozen=True)
class CoarseLabel:
    domain: str
    direction: str

    def __post_init__(self):
        if self.domain not in DOMAINS or self.direction not in DIRECTIONS:
            raise ValueError(f"unknown coarse label {self.domain}/{self.direction}")

    @property
    def name(self):
        return f"{self.domain}-{self.direction}"

    @property
    def order(self):
        return DOMAINS.index(self.domain) * len(DIRECTIONS) + DIRECTIONS.index(self.direction)


ALL_LABELS = tuple(CoarseLabel(d, r) for d in DOMAINS for r in DIRECTIONS)


@dataclass(frozen=True)
class Labeling:
    domains: dict
    directions: dict = field(default_factory=lambda: dict(DEFAULT_DIRECTIONS))

    @classmethod
    def from_dict(cls, doc):
        directions = dict(DEFAULT_DIRECTIONS)
        directions.update(doc.get("directions", {}))
        return cls(dict(doc.get("domains", {})), directions)

    def to_dict(self):
        return {"domains": dict(self.domains), "directions": dict(self.directions)}


def coarse_label(point, labeling):
    if isinstance(labeling, dict):
        labeling = Labeling.from_dict(labeling)
    domain = labeling.domains.get(point.basis)
    if domain is None:
        raise UnlabeledPhaseError(f"basis '{point.basis}' has no domain in the labeling")
    direction = labeling.directions.get(point.horizon_tag)
    if direction is None:
        raise UnlabeledPhaseError(f"horizon '{point.horizon_tag}' has no direction in the labeling")
    return CoarseLabel(domain, direction)


@dataclass(frozen=True)
class ConstraintSequence:
    ranking: tuple    # (CoarseLabel, strength) pairs

    @property
    def labels(self):
        return [label for label, _ in self.ranking]

    def to_dict(self):
        return [{"label": label.name, "strength": strength} for label, strength in self.ranking]


def _label_groups(r_field, labeling, points):
    groups = {}
    for pt in points:
        groups.setdefault(coarse_label(pt, labeling), []).append(float(r_field[pt.key]))
    return groups


def constraint_sequence(r_field, labeling, points):
    """Rank the labels by the mean of r over their phase points; labels with no points are left out."""
    groups = _label_groups(r_field, labeling, points)
    strengths = [(label, math.fsum(vals) / len(vals)) for label, vals in groups.items()]
    strengths.sort(key=lambda item: (-item[1], item[0].order))
    return ConstraintSequence(tuple(strengths))


def lowdim_reconstruction_error(r_field, labeling, points):
    """Mean squared deviation of r from its label means."""
    groups = _label_groups(r_field, labeling, points)
    sq = []
    for vals in groups.values():
        mean = math.fsum(vals) / len(vals)
        sq.extend((v - mean) ** 2 for v in vals)
    return math.fsum(sq) / len(sq) if sq else 0.0


def variance_preservation_ratio(r_field, labeling, points):
    """Share of the r variance kept by the label-mean projection."""
    values = np.array([float(r_field[pt.key]) for pt in points])
    if values.size == 0:
        return 1.0
    var = float(np.var(values))
    if var < ZERO_VARIANCE:
        return 1.0
    return 1.0 - lowdim_reconstruction_error(r_field, labeling, points) / var


def population_reconstruction_error(r_fields, points, n_components):
    """
    Mean squared PCA reconstruction error of the agents x phase-points matrix
    of r fields with n_components components.
    """
    X = np.array([[float(r[pt.key]) for pt in points] for r in r_fields])
    if X.size == 0 or X.shape[0] < 2:
        return 0.0
    if n_components <= 0:
        return float(np.mean((X - X.mean(axis=0)) ** 2))
    k = min(n_components, *X.shape)
    pca = PCA(n_components=k, svd_solver="full")
    recon = pca.inverse_transform(pca.fit_transform(X))
    return float(np.mean((X - recon) ** 2))
