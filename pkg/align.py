"""
align.py

Alignment of a sender's representation into a receiver's processable space.

A channel maps the sender alphabet T into the alphabet T' of one of the
receiver's admissible candidates. For every searched channel we compute the
transformation loss I(T;Y) - I(A(T);Y) on the sender's target, the receiver's
error on its own target when it decodes the aligned statistic, and whether the
receiver can process it (error under threshold, or positive directional
compatibility). The best processable channel is classified Full / Partial;
when none is processable the pairing is Severed.

Search modes:
  exhaustive - every deterministic map T -> T' with at most kappa used symbols
  greedy     - partitions of T from the MI-maximizing merge sequence, every
               merge of the previous level, then relocation/swap local search;
               labels of each partition are searched exhaustively
"""

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from probkit import Channel, Dist, _mi, _probs, kl_rowwise

logger = logging.getLogger(__name__)

# -------- CONFIGURATION --------
DEFAULT_DELTA = 0.01       # nats; Full iff loss <= delta
EXHAUSTIVE_CAP = 6         # largest sender alphabet searched exhaustively
TIE_TOL = 1e-12
ALIGN_MODES = ("exhaustive", "greedy")
# --------------------------------


class AlphabetTooLargeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AlignmentChannel:
    channel: Channel
    deterministic: bool

    def __post_init__(self):
        if self.deterministic != self.channel.is_deterministic:
            raise ValueError("deterministic flag must match the channel rows")

    @classmethod
    def from_mapping(cls, mapping, n_out):
        return cls(Channel.from_mapping(mapping, n_out), True)

    @property
    def mapping(self):
        return self.channel.mapping()


@dataclass(frozen=True, eq=False)
class AlignmentReport:
    sender: str
    receiver: str
    channel: AlignmentChannel
    delta_I: float
    receiver_error: float
    mu: float
    processable: bool
    reason: str
    klass: str
    searched: int

    def to_dict(self):
        return {
            "sender": self.sender,
            "receiver": self.receiver,
            "mapping": list(self.channel.mapping),
            "delta_I": self.delta_I,
            "receiver_error": self.receiver_error,
            "mu": self.mu,
            "processable": self.processable,
            "reason": self.reason,
            "class": self.klass,
            "searched": self.searched,
        }


## -------------------------------------------------------------- ##
## Quantities ##

def transformation_loss(sender_joint, a):
    """I(T;Y) - I(A(T);Y) for p(T, Y) and a channel on the T side."""
    p = _probs(sender_joint)
    rows = a.channel.rows if isinstance(a, AlignmentChannel) else _probs(a)
    if rows.shape[0] != p.shape[0]:
        raise ValueError(f"channel has {rows.shape[0]} inputs, joint has {p.shape[0]} rows")
    return _mi(p) - _mi(rows.T @ p)


def _aligned_joint(joint_ty, mapping, n_out):
    aligned = np.zeros((n_out, joint_ty.shape[1]))
    np.add.at(aligned, list(mapping), joint_ty)
    return aligned


def receiver_error(w, sender, receiver_c, mapping):
    """
    E_o KL(p(Y'|o) || receiver decoder applied to the aligned statistic).
    Infinite when the aligned prediction misses part of the posterior's support.
    """
    pred = sender.obs_encoder @ receiver_c.decoder[list(mapping)]
    post = w.posterior_table(receiver_c.target)
    p_o = w.target_joints[receiver_c.target].sum(axis=1)
    live = p_o > 0
    kl = kl_rowwise(post[live], pred[live])
    if np.any(np.isinf(kl)):
        return math.inf
    return math.fsum((p_o[live] * kl).tolist())


def pointwise_receiver_error(w, sender, receiver_c, mapping, o):
    pred = sender.obs_encoder[o] @ receiver_c.decoder[list(mapping)]
    post = w.posterior_table(receiver_c.target)[o]
    return float(kl_rowwise(post[None, :], pred[None, :])[0])


def aligned_statistic(sender, o, channel):
    """(sender representation at o, what the receiver gets through the channel)."""
    rep = sender.obs_encoder[o]
    return Dist(rep), Dist(rep @ channel.channel.rows)


def directional_compatibility(receiver, space, key):
    """z-score of r at key over the receiver's admissible phase points."""
    keys = space.admissible_keys()
    if not keys:
        return 0.0
    values = np.array([receiver.theta.r[k] for k in keys])
    sd = float(values.std())
    if sd < 1e-12:
        return 0.0
    return (receiver.theta.r[key] - float(values.mean())) / sd


def processability(receiver, key, error, mu):
    if error <= receiver.q.eta_thresh[key]:
        return True, "below-threshold"
    if mu > 0:
        return True, "receptive"
    return False, "non-receptive"


## -------------------------------------------------------------- ##
## Search ##

@dataclass(frozen=True)
class _Entry:
    processable: bool
    delta: float
    error: float
    order: tuple      # (receiver index, mapping)
    reason: str


def _better(a, b):
    if b is None:
        return True
    if a.processable != b.processable:
        return a.processable
    if a.delta < b.delta - TIE_TOL:
        return True
    if a.delta > b.delta + TIE_TOL:
        return False
    if a.error < b.error - TIE_TOL:
        return True
    if a.error > b.error + TIE_TOL:
        return False
    return a.order < b.order


class _PairSearch:
    """Evaluations for one (sender candidate, receiver candidate) pair."""

    def __init__(self, w, sender, receiver_c, index, receiver, mu, cache):
        self.w, self.sender, self.receiver_c = w, sender, receiver_c
        self.index, self.receiver, self.mu = index, receiver, mu
        self.base = _mi(sender.joint_ty)
        self.cache = cache
        self.count = 0

    def values(self, mapping):
        key = (self.w.name, self.sender.key, self.receiver_c.key, mapping)
        hit = self.cache.get(key)
        if hit is None:
            aligned = _aligned_joint(self.sender.joint_ty, mapping, self.receiver_c.cardinality)
            delta = self.base - _mi(aligned)
            hit = (delta, receiver_error(self.w, self.sender, self.receiver_c, mapping))
            self.cache[key] = hit
        self.count += 1
        return hit

    def entry(self, mapping):
        delta, err = self.values(mapping)
        ok, reason = processability(self.receiver, self.receiver_c.key, err, self.mu)
        return _Entry(ok, delta, err, (self.index, mapping), reason)

    def exhaustive(self, kappa):
        best = None
        m, m_r = self.sender.cardinality, self.receiver_c.cardinality
        for mapping in itertools.product(range(m_r), repeat=m):
            if len(set(mapping)) > kappa:
                continue
            e = self.entry(mapping)
            if _better(e, best):
                best = e
        return best

    ## greedy ##

    def _labelled(self, blocks):
        """Best labelling of a partition (block id per sender symbol)."""
        k = max(blocks) + 1
        best = None
        for labels in itertools.permutations(range(self.receiver_c.cardinality), k):
            e = self.entry(tuple(labels[b] for b in blocks))
            if _better(e, best):
                best = e
        return best

    def greedy(self, kappa):
        m = self.sender.cardinality
        limit = min(self.receiver_c.cardinality, kappa)
        memo = {}

        def evaluate(blocks):
            if blocks not in memo:
                memo[blocks] = self._labelled(blocks)
            return memo[blocks]

        # MI-maximizing merge sequence, one partition per block count
        sequence = {m: tuple(range(m))}
        current = sequence[m]
        while max(current) > 0:
            current = max(_merges(current), key=lambda b: (self._partition_mi(b), _neg(b)))
            sequence[max(current) + 1] = current

        best = None
        for k in range(m, 0, -1):
            if k > limit:
                continue
            level = [sequence[k]] + (_merges(sequence[k + 1]) if k < m else [])
            start = None
            for blocks in level:
                e = evaluate(blocks)
                if _better(e, best):
                    best = e
                if start is None or _better(e, evaluate(start)):
                    start = blocks
            for blocks in _local_search(start, limit, evaluate):
                e = evaluate(blocks)
                if _better(e, best):
                    best = e
        return best

    def _partition_mi(self, blocks):
        return _mi(_aligned_joint(self.sender.joint_ty, blocks, max(blocks) + 1))


def _canon(labels):
    seen = {}
    return tuple(seen.setdefault(b, len(seen)) for b in labels)


def _neg(blocks):
    return tuple(-b for b in blocks)


def _merges(blocks):
    k = max(blocks) + 1
    out = []
    for i in range(k):
        for j in range(i + 1, k):
            out.append(_canon(tuple(i if b == j else b for b in blocks)))
    return out


def _neighbours(blocks, limit):
    k = max(blocks) + 1
    out = set()
    for t in range(len(blocks)):
        for target in range(k + 1):
            if target == blocks[t]:
                continue
            moved = list(blocks)
            moved[t] = target
            cand = _canon(moved)
            if max(cand) + 1 <= limit:
                out.add(cand)
    for t in range(len(blocks)):
        for u in range(t + 1, len(blocks)):
            if blocks[t] != blocks[u]:
                swapped = list(blocks)
                swapped[t], swapped[u] = swapped[u], swapped[t]
                out.add(_canon(swapped))
    return sorted(out)


def _local_search(start, limit, evaluate):
    """Best-improvement descent; yields every partition it looks at."""
    current = start
    while True:
        best_nb = None
        for nb in _neighbours(current, limit):
            yield nb
            if best_nb is None or _better(evaluate(nb), evaluate(best_nb)):
                best_nb = nb
        if best_nb is None or not _better(evaluate(best_nb), evaluate(current)):
            return
        current = best_nb


def _report(sender, receiver_c, entry, mu, delta_bound, searched):
    if entry.processable:
        klass = "Full" if entry.delta <= delta_bound else "Partial"
    else:
        klass = "Severed"
    return AlignmentReport(
        sender=sender.key,
        receiver=receiver_c.key,
        channel=AlignmentChannel.from_mapping(entry.order[1], receiver_c.cardinality),
        delta_I=entry.delta,
        receiver_error=entry.error,
        mu=mu,
        processable=entry.processable,
        reason=entry.reason,
        klass=klass,
        searched=searched,
    )


def alignment_options(w, sender, sender_kappa, receiver, receiver_space, delta=DEFAULT_DELTA,
                      mode="exhaustive", cap=EXHAUSTIVE_CAP, cache=None, receiver_keys=None):
    """
    Best channel into each receiver candidate, ranked by the selection order
    (processable first, then loss, receiver error, candidate order, map order).

    receiver is the receiver's ProfileState; receiver_keys optionally restricts
    the receiver candidates searched.
    """
    if mode not in ALIGN_MODES:
        raise ValueError(f"unknown alignment mode '{mode}'")
    if mode == "exhaustive" and sender.cardinality > cap:
        raise AlphabetTooLargeError(
            f"sender alphabet {sender.cardinality} exceeds exhaustive cap {cap} ({sender.key})")
    cache = {} if cache is None else cache

    pool = [c for c in receiver_space.admissible() if receiver.zeta.includes(c.target)]
    if receiver_keys is not None:
        pool = [c for c in pool if c.key in receiver_keys]

    found = []
    for index, receiver_c in enumerate(pool):
        mu = directional_compatibility(receiver, receiver_space, receiver_c.key)
        search = _PairSearch(w, sender, receiver_c, index, receiver, mu, cache)
        entry = search.exhaustive(sender_kappa) if mode == "exhaustive" else search.greedy(sender_kappa)
        found.append((entry, receiver_c, mu, search.count))

    ranked = []
    for item in found:
        pos = 0
        while pos < len(ranked) and not _better(item[0], ranked[pos][0]):
            pos += 1
        ranked.insert(pos, item)
    return [_report(sender, rc, e, mu, delta, n) for e, rc, mu, n in ranked]


def optimize_alignment(w, sender, sender_kappa, receiver, receiver_space, delta=DEFAULT_DELTA,
                       mode="exhaustive", cap=EXHAUSTIVE_CAP, cache=None, receiver_keys=None):
    """Select the processable channel with the smallest transformation loss."""
    options = alignment_options(w, sender, sender_kappa, receiver, receiver_space, delta,
                                mode, cap, cache, receiver_keys)
    if not options:
        raise ValueError("receiver has no admissible candidate to align into")
    best = options[0]
    total = sum(o.searched for o in options)
    report = AlignmentReport(best.sender, best.receiver, best.channel, best.delta_I, best.receiver_error,
                             best.mu, best.processable, best.reason, best.klass, total)
    logger.debug("[align] %s -> %s: %s, loss %.6g", report.sender, report.receiver, report.klass, report.delta_I)
    return report


def reconstructability_matrix(w, agents, spaces, delta=DEFAULT_DELTA, mode="exhaustive",
                              cap=EXHAUSTIVE_CAP, cache=None):
    """
    Align every admissible candidate of every agent into every other agent.

    Returns rows {sender, receiver, mean_delta_I, processable_share, classes,
    lost_at} where lost_at lists the sender phase points that end Severed.
    """
    cache = {} if cache is None else cache
    rows = []
    for a in agents:
        for b in agents:
            if a.id == b.id:
                continue
            senders = [c for c in spaces[a.id].admissible() if a.state.zeta.includes(c.target)]
            reports = [optimize_alignment(w, c, a.state.zeta.kappa, b.state, spaces[b.id], delta,
                                          mode, cap, cache) for c in senders]
            classes = {k: sum(r.klass == k for r in reports) for k in ("Full", "Partial", "Severed")}
            rows.append({
                "sender": a.id,
                "receiver": b.id,
                "mean_delta_I": math.fsum(r.delta_I for r in reports) / len(reports) if reports else 0.0,
                "processable_share": sum(r.processable for r in reports) / len(reports) if reports else 0.0,
                "classes": classes,
                "lost_at": [r.sender for r in reports if not r.processable],
            })
    return rows
