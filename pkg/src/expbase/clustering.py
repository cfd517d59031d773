"""Multi-view density clustering of QA tuples, topic merging, warm-start refresh."""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .canonicalize import QATuple
from .textmodel import embed_text

_EPS_SLACK = 1e-12


@dataclass(frozen=True)
class MultiViewWeights:
    question: float = 0.5
    answer: float = 0.3
    joint: float = 0.2

    def __post_init__(self):
        vals = (self.question, self.answer, self.joint)
        if min(vals) < 0 or abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"view weights must be >= 0 and sum to 1, got {vals}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.question, self.answer, self.joint)


@dataclass(frozen=True)
class Cluster:
    cluster_id: str
    members: tuple[tuple[str, float], ...]
    medoid_id: str
    centroid: np.ndarray = field(compare=False, repr=False)
    aliases: tuple[str, ...] = ()

    @property
    def member_ids(self) -> list[str]:
        return [m for m, _ in self.members]

    @property
    def hard_ids(self) -> list[str]:
        return [m for m, w in self.members if w >= 1.0]

    def weight_of(self, tuple_id: str) -> float:
        for m, w in self.members:
            if m == tuple_id:
                return w
        return 0.0

    def to_json(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "aliases": list(self.aliases),
            "medoid_id": self.medoid_id,
            "members": [{"id": m, "weight": w} for m, w in self.members],
        }


@dataclass(frozen=True)
class ClusteringResult:
    clusters: list[Cluster]
    noise: list[str]


@dataclass(frozen=True)
class RefreshResult:
    clusters: list[Cluster]
    changed: list[str]
    removed: list[str]
    noise: list[str]


def tuple_views(t: QATuple) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Question, answer (None if absent) and joint QA embeddings."""
    u = embed_text(t.intent)
    if t.answer.strip():
        return u, embed_text(t.answer), embed_text(f"{t.question} {t.answer}")
    return u, None, embed_text(t.question)


def multiview_similarity(p: QATuple, q: QATuple, w: MultiViewWeights = MultiViewWeights()) -> float:
    """Weighted sum of question, answer and joint cosines.

    If either tuple lacks an answer the answer view is dropped and the
    remaining weights are renormalized.
    """
    up, vp, wp = tuple_views(p)
    uq, vq, wq = tuple_views(q)
    l1, l2, l3 = w.as_tuple()
    total = float(np.dot(up, uq)) * l1 + float(np.dot(wp, wq)) * l3
    norm = l1 + l3
    if vp is not None and vq is not None:
        total += float(np.dot(vp, vq)) * l2
        norm += l2
    if norm <= 0.0:
        return float(np.dot(up, uq))
    return total / norm


def _pca(mat: np.ndarray, dim: int) -> np.ndarray:
    if mat.shape[0] <= 1 or dim >= mat.shape[1]:
        return mat
    centered = mat - mat.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    red = centered @ vt[:dim].T
    norms = np.linalg.norm(red, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return red / norms


def similarity_matrix(
    tuples: Sequence[QATuple],
    w: MultiViewWeights = MultiViewWeights(),
    pca_dim: int | None = None,
) -> np.ndarray:
    """Pairwise multi-view similarity, symmetric by construction."""
    views = [tuple_views(t) for t in tuples]
    dim = views[0][0].shape[0] if views else 0
    u = np.vstack([v[0] for v in views]) if views else np.zeros((0, dim))
    has_a = np.array([v[1] is not None for v in views], dtype=bool)
    a = np.vstack([v[1] if v[1] is not None else np.zeros(dim) for v in views]) if views else u
    j = np.vstack([v[2] for v in views]) if views else u
    if pca_dim:
        u, j = _pca(u, pca_dim), _pca(j, pca_dim)
        a = _pca(a, pca_dim) * has_a[:, None]
    l1, l2, l3 = w.as_tuple()
    mask = np.outer(has_a, has_a)
    num = l1 * (u @ u.T) + l3 * (j @ j.T) + l2 * mask * (a @ a.T)
    den = l1 + l3 + l2 * mask
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(den > 0, num / np.where(den > 0, den, 1.0), u @ u.T)
    upper = np.triu(sim, 1)
    sim = upper + upper.T
    np.fill_diagonal(sim, 1.0)
    return np.clip(sim, -1.0, 1.0)


def distance_matrix(
    tuples: Sequence[QATuple],
    w: MultiViewWeights = MultiViewWeights(),
    pca_dim: int | None = None,
) -> np.ndarray:
    dist = np.clip(1.0 - similarity_matrix(tuples, w, pca_dim), 0.0, 2.0)
    np.fill_diagonal(dist, 0.0)
    return dist


def cluster_id_for(member_ids: Iterable[str]) -> str:
    digest = hashlib.sha1("|".join(sorted(member_ids)).encode("utf-8")).hexdigest()
    return f"c{digest[:12]}"


def _medoid(hard: Sequence[int], sim: np.ndarray, ids: Sequence[str]) -> int:
    best, best_score = None, -np.inf
    for i in sorted(hard, key=lambda k: ids[k]):
        score = float(sim[i, hard].sum())
        if score > best_score + 1e-12:
            best, best_score = i, score
    return best


def _centroid(members: Sequence[tuple[str, float]], lookup: Mapping[str, QATuple]) -> np.ndarray:
    """Normalized mean question embedding of the hard (weight 1) members.

    Soft members are left out so overlapping intents do not drag neighbouring
    centroids together and trigger spurious topic merges.
    """
    acc = None
    for mid, weight in members:
        if weight < 1.0:
            continue
        vec = tuple_views(lookup[mid])[0]
        acc = vec if acc is None else acc + vec
    norm = np.linalg.norm(acc)
    return acc / norm if norm > 0 else acc


def knn_eps(dist: np.ndarray, min_cluster_size: int, eps_quantile: float = 90.0) -> float:
    """Nearest-rank percentile of each point's k-th nearest-neighbour distance.

    ``k = min_cluster_size`` with the point itself counting as its first
    neighbour (as in the core-point test).
    """
    n = dist.shape[0]
    if n <= 1:
        return 0.0
    k = max(1, min(min_cluster_size, n))
    kdist = [float(np.sort(dist[i])[k - 1]) for i in range(n)]
    return float(np.percentile(kdist, eps_quantile, method="inverted_cdf"))


def density_labels(
    dist: np.ndarray,
    min_cluster_size: int,
    eps_quantile: float = 90.0,
    eps: float | None = None,
) -> tuple[list[int], float]:
    """DBSCAN-style labels over a precomputed distance matrix (-1 = noise).

    ``eps`` defaults to :func:`knn_eps`; the nearest-rank percentile means the
    farthest point of a tiny input still sets it. Points are visited in index
    order, so callers pass id-sorted inputs.
    """
    n = dist.shape[0]
    if n == 1:
        return ([0] if min_cluster_size <= 1 else [-1]), 0.0
    if eps is None:
        eps = knn_eps(dist, min_cluster_size, eps_quantile)
    neighbours = [np.flatnonzero(dist[i] <= eps + _EPS_SLACK) for i in range(n)]
    core = [len(nb) >= min_cluster_size for nb in neighbours]
    labels = [-1] * n
    next_label = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = next_label
        queue = deque([i])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in neighbours[p]:
                if labels[q] == -1:
                    labels[q] = next_label
                    queue.append(q)
        next_label += 1
    return labels, eps


def _soft_memberships(
    hard_groups: Sequence[Sequence[int]],
    medoids: Sequence[int],
    sim: np.ndarray,
    soft_threshold: float,
) -> list[list[tuple[int, float]]]:
    out = []
    for group, med in zip(hard_groups, medoids):
        hard = set(group)
        members = [(i, 1.0) for i in group]
        for i in range(sim.shape[0]):
            if i in hard:
                continue
            s = float(sim[i, med])
            if s >= soft_threshold:
                members.append((i, min(s, 1.0)))
        out.append(members)
    return out


def _assemble(
    ids: Sequence[str],
    groups: Sequence[Sequence[int]],
    sim: np.ndarray,
    lookup: Mapping[str, QATuple],
    soft_threshold: float | None,
    keep_ids: Sequence[str | None] | None = None,
    aliases: Sequence[tuple[str, ...]] | None = None,
) -> list[Cluster]:
    medoids = [_medoid(g, sim, ids) for g in groups]
    if soft_threshold is None:
        memberships = [[(i, 1.0) for i in g] for g in groups]
    else:
        memberships = _soft_memberships(groups, medoids, sim, soft_threshold)
    clusters = []
    for n, (group, med, mem) in enumerate(zip(groups, medoids, memberships)):
        members = tuple(sorted(((ids[i], w) for i, w in mem), key=lambda m: m[0]))
        cid = (keep_ids[n] if keep_ids and keep_ids[n] else None) or cluster_id_for(ids[i] for i in group)
        clusters.append(
            Cluster(cid, members, ids[med], _centroid(members, lookup), aliases[n] if aliases else ())
        )
    return sorted(clusters, key=lambda c: c.cluster_id)


def cluster_qa(
    tuples: Sequence[QATuple],
    w: MultiViewWeights = MultiViewWeights(),
    min_cluster_size: int = 2,
    soft_threshold: float = 0.45,
    pca_dim: int | None = None,
) -> ClusteringResult:
    """Density clustering over ``1 - multiview_similarity`` with soft assignment."""
    if not tuples:
        raise ValueError("cluster_qa needs at least one tuple")
    if not 0.0 < soft_threshold < 1.0:
        raise ValueError("soft_threshold must be in (0, 1)")
    ordered = sorted(tuples, key=lambda t: t.id)
    ids = [t.id for t in ordered]
    lookup = {t.id: t for t in ordered}
    sim = similarity_matrix(ordered, w, pca_dim)
    dist = np.clip(1.0 - sim, 0.0, 2.0)
    np.fill_diagonal(dist, 0.0)
    labels, _ = density_labels(dist, min_cluster_size)
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        if lab >= 0:
            groups.setdefault(lab, []).append(i)
    clusters = _assemble(ids, [groups[k] for k in sorted(groups)], sim, lookup, soft_threshold)
    covered = {m for c in clusters for m in c.member_ids}
    return ClusteringResult(clusters, [i for i in ids if i not in covered])


def _rebuild(
    cluster_id: str,
    members: Sequence[tuple[str, float]],
    aliases: Sequence[str],
    lookup: Mapping[str, QATuple],
    w: MultiViewWeights,
) -> Cluster:
    members = tuple(sorted(members, key=lambda m: m[0]))
    hard = [m for m, wt in members if wt >= 1.0]
    hard_tuples = [lookup[m] for m in hard]
    sim = similarity_matrix(hard_tuples, w)
    med = hard[_medoid(list(range(len(hard))), sim, hard)]
    return Cluster(cluster_id, members, med, _centroid(members, lookup), tuple(sorted(set(aliases))))


def merge_topics(
    clusters: Sequence[Cluster],
    merge_threshold: float,
    lookup: Mapping[str, QATuple],
    w: MultiViewWeights = MultiViewWeights(),
    protected: Iterable[str] = (),
) -> list[Cluster]:
    """Greedily merge the most similar centroid pair until none reaches the threshold.

    The survivor keeps the lexicographically smaller id (a ``protected`` id wins
    over an unprotected one); the absorbed id is recorded as an alias.
    """
    if not 0.0 < merge_threshold <= 1.0:
        raise ValueError("merge_threshold must be in (0, 1]")
    protected = set(protected)
    live = sorted(clusters, key=lambda c: c.cluster_id)
    while len(live) > 1:
        cents = np.vstack([c.centroid for c in live])
        sims = cents @ cents.T
        best = None
        for i in range(len(live)):
            for j in range(i + 1, len(live)):
                s = float(sims[i, j])
                if s >= merge_threshold - _EPS_SLACK and (best is None or s > best[0] + 1e-12):
                    best = (s, i, j)
        if best is None:
            break
        _, i, j = best
        a, b = live[i], live[j]
        if (b.cluster_id in protected) and (a.cluster_id not in protected):
            a, b = b, a
        weights: dict[str, float] = {}
        for m, wt in a.members + b.members:
            weights[m] = max(weights.get(m, 0.0), wt)
        merged = _rebuild(a.cluster_id, list(weights.items()), a.aliases + b.aliases + (b.cluster_id,), lookup, w)
        live = sorted([c for k, c in enumerate(live) if k not in (i, j)] + [merged], key=lambda c: c.cluster_id)
    return live


def _resoft(
    clusters: Sequence[Cluster],
    lookup: Mapping[str, QATuple],
    w: MultiViewWeights,
    soft_threshold: float,
) -> list[Cluster]:
    ordered = sorted(lookup.values(), key=lambda t: t.id)
    ids = [t.id for t in ordered]
    pos = {t: i for i, t in enumerate(ids)}
    sim = similarity_matrix(ordered, w)
    groups = [[pos[m] for m in c.hard_ids] for c in clusters]
    medoids = [pos[c.medoid_id] for c in clusters]
    memberships = _soft_memberships(groups, medoids, sim, soft_threshold)
    out = []
    for c, mem in zip(clusters, memberships):
        members = tuple(sorted(((ids[i], wt) for i, wt in mem), key=lambda m: m[0]))
        out.append(Cluster(c.cluster_id, members, c.medoid_id, _centroid(members, lookup), c.aliases))
    return out


def warm_start_refresh(
    existing: Sequence[Cluster],
    new_tuples: Sequence[QATuple],
    lookup: Mapping[str, QATuple],
    w: MultiViewWeights = MultiViewWeights(),
    min_cluster_size: int = 2,
    soft_threshold: float = 0.45,
    merge_threshold: float = 0.85,
) -> RefreshResult:
    """Fold new tuples into existing clusters while keeping their identifiers.

    Density components are computed over the grown collection, so the
    partition is the one a full rebuild would find. Each component is then
    claimed by the existing cluster holding most of its members (ties go to
    the smaller id, a cluster claims at most one component and prefers the
    one its id was derived from); unclaimed
    components become new clusters. Clusters whose members did not change are
    returned as they were. ``lookup`` must resolve every member of
    ``existing`` and may hold more tuples (earlier noise).
    """
    if not new_tuples:
        return RefreshResult(list(existing), [], [], [])
    full = dict(lookup)
    full.update({t.id: t for t in new_tuples})
    before = {c.cluster_id: c for c in existing}

    everything = sorted(full.values(), key=lambda t: t.id)
    labels, _ = density_labels(distance_matrix(everything, w), min_cluster_size)
    components: dict[int, list[str]] = {}
    for t, lab in zip(everything, labels):
        if lab >= 0:
            components.setdefault(lab, []).append(t.id)

    owner_of = {m: c.cluster_id for c in existing for m in c.hard_ids}
    claims = []
    for lab, ids in components.items():
        counts: dict[str, int] = {}
        for i in ids:
            if i in owner_of:
                counts[owner_of[i]] = counts.get(owner_of[i], 0) + 1
        own = cluster_id_for(ids)
        # a cluster first reclaims the component its id was derived from
        claims.extend((cid != own, -n, cid, min(ids), lab) for cid, n in counts.items())
    assigned: dict[int, str] = {}
    used: set[str] = set()
    for *_, cid, _, lab in sorted(claims):
        if lab not in assigned and cid not in used:
            assigned[lab] = cid
            used.add(cid)

    clusters: list[Cluster] = []
    for lab in sorted(components, key=lambda l: min(components[l])):
        ids = components[lab]
        cid = assigned.get(lab)
        if cid is None:
            cid = base_id = cluster_id_for(ids)
            n = 1
            while cid in used or cid in before:
                cid = f"{base_id}-{n}"
                n += 1
            used.add(cid)
            clusters.append(_rebuild(cid, [(i, 1.0) for i in ids], (), full, w))
        elif ids == before[cid].hard_ids:
            clusters.append(before[cid])
        else:
            clusters.append(_rebuild(cid, [(i, 1.0) for i in ids], before[cid].aliases, full, w))

    clusters = _resoft(clusters, full, w, soft_threshold)
    clusters = merge_topics(clusters, merge_threshold, full, w, protected=before.keys())
    covered = {m for c in clusters for m in c.member_ids}
    noise = [t.id for t in everything if t.id not in covered]

    # a dropped cluster whose members moved into a survivor becomes its alias
    live = {c.cluster_id: c for c in clusters}
    home = {m: c.cluster_id for c in clusters for m in c.hard_ids}
    for cid in sorted(set(before) - set(live)):
        targets = [home[m] for m in before[cid].hard_ids if m in home]
        if targets:
            dest = min(set(targets), key=lambda d: (-targets.count(d), d))
            c = live[dest]
            live[dest] = replace(c, aliases=tuple(sorted(set(c.aliases) | {cid} | set(before[cid].aliases))))
    clusters = [live[c.cluster_id] for c in clusters]

    changed = []
    for c in clusters:
        old = before.get(c.cluster_id)
        if old is None or old.members != c.members or old.medoid_id != c.medoid_id or old.aliases != c.aliases:
            changed.append(c.cluster_id)
    removed = sorted(cid for cid in before if cid not in live)
    return RefreshResult(clusters, sorted(changed), removed, noise)


def clusters_to_jsonl(clusters: Iterable[Cluster]) -> str:
    return "".join(json.dumps(c.to_json(), sort_keys=True) + "\n" for c in clusters)


def clusters_from_jsonl(text: str, lookup: Mapping[str, QATuple]) -> list[Cluster]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        members = tuple((m["id"], float(m["weight"])) for m in obj["members"])
        out.append(
            Cluster(obj["cluster_id"], members, obj["medoid_id"], _centroid(members, lookup), tuple(obj.get("aliases", ())))
        )
    return out
