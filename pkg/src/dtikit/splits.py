"""Leakage-controlled dataset splits and episode sampling.

Five protocols, in increasing strictness about what the test set may share
with training data:

* random: plain shuffled fractions.
* cold pair: test pairs where both the drug and the protein are unseen.
* cluster cross-domain: single-linkage clusters of drugs (fingerprint
  Jaccard) and proteins (composition cosine); source and target domains
  get disjoint cluster sets and records straddling domains are dropped.
* meta unseen: records grouped into (protein cluster, drug scaffold)
  tasks for episodic training, with the novelty axis's clusters divided
  so target-test tasks come from clusters never seen in the source pool.
* specific meta: one task per protein, episodes forced to use disjoint
  drugs between support and query.

Every protocol returns a SplitManifest that serializes to sorted-key JSON,
so a (records, seed, params) triple always produces byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import InteractionRecord
from .descriptors import cosine_distance, ecfp, jaccard_distance, murcko_scaffold_key, psc
from .rng import substream
from .smiles import parse_smiles

SOURCE = "source"
TARGET = "target"
TRAIN = "train"
VAL = "val"
TEST = "test"


class NonSymmetric(ValueError):
    pass


class NegativeDistance(ValueError):
    pass


class BadFractions(ValueError):
    pass


class TooFewEntities(ValueError):
    pass


class InsufficientData(ValueError):
    pass


class InsufficientClassSamples(ValueError):
    pass


# -- clustering ------------------------------------------------------------


def single_linkage_cluster(dist: np.ndarray, threshold: float) -> np.ndarray:
    """Cluster by merging while any inter-cluster single-link distance is
    below threshold; equivalently, connected components of the graph with
    edges at dist < threshold. Labels are canonical: numbered by first
    member in index order."""
    d = np.asarray(dist, dtype=np.float64)
    n = d.shape[0]
    if d.shape != (n, n) or not np.array_equal(d, d.T):
        raise NonSymmetric("distance matrix must be square and symmetric")
    if np.any(d < 0):
        raise NegativeDistance("distances must be non-negative")
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if d[i, j] < threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    labels = np.empty(n, dtype=np.int64)
    relabel: dict[int, int] = {}
    for i in range(n):
        root = find(i)
        if root not in relabel:
            relabel[root] = len(relabel)
        labels[i] = relabel[root]
    return labels


def drug_distance_matrix(smiles_list: list[str]) -> np.ndarray:
    fps = [ecfp(parse_smiles(s)) for s in smiles_list]
    n = len(fps)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = jaccard_distance(fps[i], fps[j])
    return d


def protein_distance_matrix(sequences: list[str]) -> np.ndarray:
    vecs = [psc(s) for s in sequences]
    n = len(vecs)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = cosine_distance(vecs[i], vecs[j])
    return d


# -- manifest ---------------------------------------------------------------


@dataclass
class SplitManifest:
    strategy: str
    seed: int
    params: dict = field(default_factory=dict)
    assignments: dict[int, tuple[str, str]] = field(default_factory=dict)  # idx -> (domain, partition)
    dropped: list[int] = field(default_factory=list)
    drug_clusters: dict[str, int] = field(default_factory=dict)
    protein_clusters: dict[str, int] = field(default_factory=dict)
    tasks: dict[str, dict] = field(default_factory=dict)  # task id -> {"pool": ..., "records": [...]}

    def indices(self, domain: str | None = None, partition: str | None = None) -> list[int]:
        out = []
        for idx, (dom, part) in self.assignments.items():
            if domain is not None and dom != domain:
                continue
            if partition is not None and part != partition:
                continue
            out.append(idx)
        return sorted(out)

    def task_ids(self, pool: str) -> list[str]:
        return sorted(t for t, info in self.tasks.items() if info["pool"] == pool)

    def to_json(self) -> str:
        payload = {
            "strategy": self.strategy,
            "seed": self.seed,
            "params": self.params,
            "assignments": {str(k): list(v) for k, v in self.assignments.items()},
            "dropped": sorted(self.dropped),
            "drug_clusters": self.drug_clusters,
            "protein_clusters": self.protein_clusters,
            "tasks": self.tasks,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "SplitManifest":
        raw = json.loads(text)
        return cls(
            strategy=raw["strategy"],
            seed=raw["seed"],
            params=raw["params"],
            assignments={int(k): (v[0], v[1]) for k, v in raw["assignments"].items()},
            dropped=list(raw["dropped"]),
            drug_clusters=raw["drug_clusters"],
            protein_clusters=raw["protein_clusters"],
            tasks=raw["tasks"],
        )

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        return cls.from_json(Path(path).read_text())


def _check_complete(manifest: SplitManifest, n_records: int) -> SplitManifest:
    # every record lands in exactly one partition or is explicitly dropped
    seen = set(manifest.assignments) | set(manifest.dropped)
    assert len(manifest.assignments) + len(manifest.dropped) == n_records
    assert seen == set(range(n_records))
    return manifest


# -- flat splits -------------------------------------------------------------


def random_split(
    records: list[InteractionRecord],
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> SplitManifest:
    """Shuffled split; val and test take their floored share, the remainder
    stays in train."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be three non-negatives summing to 1, got {fractions}")
    n = len(records)
    order = substream(seed, "split.random").permutation(n)
    n_val = int(n * fractions[1])
    n_test = int(n * fractions[2])
    n_train = n - n_val - n_test
    manifest = SplitManifest("random", seed, {"fractions": list(fractions)})
    for pos, idx in enumerate(order):
        if pos < n_train:
            part = TRAIN
        elif pos < n_train + n_val:
            part = VAL
        else:
            part = TEST
        manifest.assignments[int(idx)] = (SOURCE, part)
    return _check_complete(manifest, n)


def cold_pair_split(
    records: list[InteractionRecord],
    seed: int = 0,
    seen_fraction: float = 0.7,
    val_fraction: float = 0.3,
    min_entities: int = 10,
) -> SplitManifest:
    """Hold out drugs and proteins jointly.

    A seen_fraction sample of drugs and of proteins is marked seen; records
    with both entities seen train, records with both unseen split into
    val/test, and mixed records are dropped so nothing in evaluation shares
    an entity with training.
    """
    drugs = sorted({r.drug_id for r in records})
    prots = sorted({r.protein_id for r in records})
    if len(drugs) < min_entities or len(prots) < min_entities:
        raise TooFewEntities(
            f"cold split needs >= {min_entities} distinct drugs and proteins, "
            f"got {len(drugs)} drugs / {len(prots)} proteins"
        )
    rng = substream(seed, "split.cold")
    seen_drugs = set(rng.choice(drugs, size=int(len(drugs) * seen_fraction), replace=False))
    seen_prots = set(rng.choice(prots, size=int(len(prots) * seen_fraction), replace=False))

    manifest = SplitManifest(
        "cold_pair", seed, {"seen_fraction": seen_fraction, "val_fraction": val_fraction}
    )
    unseen_pairs: list[int] = []
    for idx, rec in enumerate(records):
        d_seen = rec.drug_id in seen_drugs
        p_seen = rec.protein_id in seen_prots
        if d_seen and p_seen:
            manifest.assignments[idx] = (SOURCE, TRAIN)
        elif not d_seen and not p_seen:
            unseen_pairs.append(idx)
        else:
            manifest.dropped.append(idx)
    order = rng.permutation(len(unseen_pairs))
    n_val = int(len(unseen_pairs) * val_fraction)
    for pos, oi in enumerate(order):
        part = VAL if pos < n_val else TEST
        manifest.assignments[unseen_pairs[oi]] = (SOURCE, part)
    return _check_complete(manifest, len(records))


def cluster_cross_domain_split(
    records: list[InteractionRecord],
    seed: int = 0,
    drug_threshold: float = 0.5,
    protein_threshold: float = 0.5,
    source_fraction: float = 0.6,
    val_fraction: float = 0.3,
) -> SplitManifest:
    """Split along chemistry, not records: drug and protein clusters are
    each divided into source and target sets, source-by-source records form
    the labeled training domain, target-by-target records form the
    evaluation domain (split val/test), and straddlers are dropped."""
    drugs = sorted({r.drug_id for r in records})
    prots = sorted({r.protein_id for r in records})
    smiles_of = {r.drug_id: r.smiles for r in records}
    seq_of = {r.protein_id: r.sequence for r in records}

    d_labels = single_linkage_cluster(
        drug_distance_matrix([smiles_of[d] for d in drugs]), drug_threshold
    )
    p_labels = single_linkage_cluster(
        protein_distance_matrix([seq_of[p] for p in prots]), protein_threshold
    )
    drug_cluster = {d: int(c) for d, c in zip(drugs, d_labels)}
    prot_cluster = {p: int(c) for p, c in zip(prots, p_labels)}

    rng = substream(seed, "split.cluster")

    def pick_source(labels: np.ndarray) -> set[int]:
        ids = sorted(set(int(c) for c in labels))
        if len(ids) < 2:
            raise InsufficientData("cross-domain split needs at least 2 clusters per side")
        k = min(max(1, int(len(ids) * source_fraction)), len(ids) - 1)
        shuffled = list(rng.permutation(ids))
        return set(int(c) for c in shuffled[:k])

    src_drug_clusters = pick_source(d_labels)
    src_prot_clusters = pick_source(p_labels)

    manifest = SplitManifest(
        "cluster_cross_domain",
        seed,
        {
            "drug_threshold": drug_threshold,
            "protein_threshold": protein_threshold,
            "source_fraction": source_fraction,
            "val_fraction": val_fraction,
        },
        drug_clusters=drug_cluster,
        protein_clusters=prot_cluster,
    )
    target_records: list[int] = []
    for idx, rec in enumerate(records):
        d_src = drug_cluster[rec.drug_id] in src_drug_clusters
        p_src = prot_cluster[rec.protein_id] in src_prot_clusters
        if d_src and p_src:
            manifest.assignments[idx] = (SOURCE, TRAIN)
        elif not d_src and not p_src:
            target_records.append(idx)
        else:
            manifest.dropped.append(idx)
    order = rng.permutation(len(target_records))
    n_val = int(len(target_records) * val_fraction)
    for pos, oi in enumerate(order):
        part = VAL if pos < n_val else TEST
        manifest.assignments[target_records[oi]] = (TARGET, part)
    return _check_complete(manifest, len(records))


# -- meta splits --------------------------------------------------------------


def _allocate_clusters_by_mass(
    cluster_sizes: dict[int, int], source_mass: float
) -> tuple[set[int], set[int]]:
    """Order clusters by record count descending and hand them to the source
    side until at least source_mass of the records are covered."""
    total = sum(cluster_sizes.values())
    source: set[int] = set()
    acc = 0
    for cluster in sorted(cluster_sizes, key=lambda c: (-cluster_sizes[c], c)):
        if acc >= source_mass * total and source:
            break
        source.add(cluster)
        acc += cluster_sizes[cluster]
    target = set(cluster_sizes) - source
    return source, target


def _finish_meta_manifest(
    manifest: SplitManifest,
    records: list[InteractionRecord],
    task_records: dict[str, list[int]],
    task_is_source: dict[str, bool],
    undersized: list[str],
    target_train_fraction: float,
    rng: np.random.Generator,
) -> SplitManifest:
    source_pool: list[int] = []
    target_tasks: list[str] = []
    for tid in sorted(task_records):
        if task_is_source[tid]:
            source_pool.extend(task_records[tid])
            manifest.tasks[tid] = {"pool": "source", "records": sorted(task_records[tid])}
        else:
            target_tasks.append(tid)
    if not target_tasks:
        raise InsufficientData("no target tasks with enough records remain")
    order = rng.permutation(len(target_tasks))
    n_train = int(len(target_tasks) * target_train_fraction)
    train_tasks = {target_tasks[i] for i in order[:n_train]}
    test_tasks = [t for t in target_tasks if t not in train_tasks]
    if not test_tasks:
        raise InsufficientData("target task pool too small to reserve test tasks")
    for tid in target_tasks:
        pool = "target_train" if tid in train_tasks else "target_test"
        manifest.tasks[tid] = {"pool": pool, "records": sorted(task_records[tid])}
        part = TRAIN if tid in train_tasks else TEST
        for idx in task_records[tid]:
            manifest.assignments[idx] = (TARGET, part)
    for idx in source_pool:
        manifest.assignments[idx] = (SOURCE, TRAIN)
    manifest.params["n_undersized_tasks"] = len(undersized)
    return _check_complete(manifest, len(records))


def meta_unseen_split(
    records: list[InteractionRecord],
    kind: str = "protein",
    seed: int = 0,
    threshold: float = 0.5,
    min_task_records: int = 6,
    source_mass: float = 0.4,
    target_train_fraction: float = 0.7,
) -> SplitManifest:
    """Episodic split with novel proteins (kind="protein") or novel drug
    scaffolds (kind="drug") in the target domain.

    Tasks are (protein cluster, drug scaffold cluster) record groups.
    Undersized tasks are folded into the source pool for diversity. The
    novelty axis's clusters are then ranked by record mass and the heaviest
    take source duty until source_mass is reached; tasks in the remaining
    clusters become target tasks, split into train/test task pools.
    """
    if kind not in ("protein", "drug"):
        raise ValueError(f"kind must be 'protein' or 'drug', got {kind!r}")
    drugs = sorted({r.drug_id for r in records})
    prots = sorted({r.protein_id for r in records})
    smiles_of = {r.drug_id: r.smiles for r in records}
    seq_of = {r.protein_id: r.sequence for r in records}

    p_labels = single_linkage_cluster(
        protein_distance_matrix([seq_of[p] for p in prots]), threshold
    )
    prot_cluster = {p: int(c) for p, c in zip(prots, p_labels)}
    scaffold_ids: dict[str, int] = {}
    drug_cluster: dict[str, int] = {}
    for d in drugs:
        key = murcko_scaffold_key(parse_smiles(smiles_of[d]))
        scaffold_ids.setdefault(key, len(scaffold_ids))
        drug_cluster[d] = scaffold_ids[key]

    task_records: dict[str, list[int]] = {}
    task_axis_cluster: dict[str, int] = {}
    for idx, rec in enumerate(records):
        pc = prot_cluster[rec.protein_id]
        dc = drug_cluster[rec.drug_id]
        tid = f"p{pc}-d{dc}"
        task_records.setdefault(tid, []).append(idx)
        task_axis_cluster[tid] = pc if kind == "protein" else dc

    undersized = {t for t, recs in task_records.items() if len(recs) < min_task_records}
    cluster_sizes: dict[int, int] = {}
    for tid in task_records:
        if tid in undersized:
            continue
        cluster_sizes[task_axis_cluster[tid]] = (
            cluster_sizes.get(task_axis_cluster[tid], 0) + len(task_records[tid])
        )
    if not cluster_sizes:
        raise InsufficientData(f"no task reaches {min_task_records} records")
    src_clusters, _ = _allocate_clusters_by_mass(cluster_sizes, source_mass)

    task_is_source = {}
    for tid in task_records:
        task_is_source[tid] = tid in undersized or task_axis_cluster[tid] in src_clusters

    manifest = SplitManifest(
        f"meta_unseen_{kind}",
        seed,
        {
            "threshold": threshold,
            "min_task_records": min_task_records,
            "source_mass": source_mass,
            "target_train_fraction": target_train_fraction,
        },
        drug_clusters=drug_cluster,
        protein_clusters=prot_cluster,
    )
    rng = substream(seed, "split.meta")
    return _finish_meta_manifest(
        manifest, records, task_records, task_is_source, undersized, target_train_fraction, rng
    )


def specific_meta_split(
    records: list[InteractionRecord],
    seed: int = 0,
    threshold: float = 0.5,
    min_task_records: int = 6,
    source_mass: float = 0.4,
    target_train_fraction: float = 0.7,
) -> SplitManifest:
    """One task per protein; cluster allocation as in the unseen split, so
    target proteins come from protein clusters with no source presence.
    Episodes drawn from these tasks should enforce disjoint drugs between
    support and query (sample_episode(disjoint_drugs=True))."""
    prots = sorted({r.protein_id for r in records})
    seq_of = {r.protein_id: r.sequence for r in records}
    p_labels = single_linkage_cluster(
        protein_distance_matrix([seq_of[p] for p in prots]), threshold
    )
    prot_cluster = {p: int(c) for p, c in zip(prots, p_labels)}

    task_records: dict[str, list[int]] = {}
    for idx, rec in enumerate(records):
        task_records.setdefault(rec.protein_id, []).append(idx)

    undersized = {t for t, recs in task_records.items() if len(recs) < min_task_records}
    cluster_sizes: dict[int, int] = {}
    for tid in task_records:
        if tid in undersized:
            continue
        cluster_sizes[prot_cluster[tid]] = cluster_sizes.get(prot_cluster[tid], 0) + len(task_records[tid])
    if not cluster_sizes:
        raise InsufficientData(f"no task reaches {min_task_records} records")
    src_clusters, _ = _allocate_clusters_by_mass(cluster_sizes, source_mass)

    task_is_source = {}
    for tid in task_records:
        task_is_source[tid] = tid in undersized or prot_cluster[tid] in src_clusters

    manifest = SplitManifest(
        "specific_meta",
        seed,
        {
            "threshold": threshold,
            "min_task_records": min_task_records,
            "source_mass": source_mass,
            "target_train_fraction": target_train_fraction,
        },
        protein_clusters=prot_cluster,
    )
    rng = substream(seed, "split.specific_meta")
    return _finish_meta_manifest(
        manifest, records, task_records, task_is_source, undersized, target_train_fraction, rng
    )


# -- episodes -----------------------------------------------------------------


@dataclass(frozen=True)
class Episode:
    task_id: str
    support: tuple[int, ...]  # record indices, k positives then k negatives
    query: tuple[int, ...]

    def to_json(self) -> str:
        return json.dumps(
            {"task_id": self.task_id, "support": list(self.support), "query": list(self.query)},
            sort_keys=True,
        )


def sample_episode(
    records: list[InteractionRecord],
    task_id: str,
    task_indices: list[int],
    k: int,
    k_query: int,
    rng: np.random.Generator,
    disjoint_drugs: bool = False,
) -> Episode:
    """Draw a k-shot episode from one task's records.

    Support takes k positives and k negatives without replacement; the
    query draws k_query from the leftovers (when disjoint_drugs, leftovers
    sharing a drug with the support are excluded first).
    """
    pos = sorted(i for i in task_indices if records[i].label == 1.0)
    neg = sorted(i for i in task_indices if records[i].label == 0.0)
    if len(pos) < k or len(neg) < k:
        raise InsufficientClassSamples(
            f"task {task_id}: need {k} of each class, have {len(pos)}+/{len(neg)}-"
        )
    sup_pos = [int(i) for i in rng.choice(pos, size=k, replace=False)]
    sup_neg = [int(i) for i in rng.choice(neg, size=k, replace=False)]
    support = sup_pos + sup_neg
    taken = set(support)
    rest = [i for i in sorted(task_indices) if i not in taken]
    if disjoint_drugs:
        sup_drugs = {records[i].drug_id for i in support}
        rest = [i for i in rest if records[i].drug_id not in sup_drugs]
    if len(rest) < k_query:
        raise InsufficientClassSamples(
            f"task {task_id}: only {len(rest)} records left for a {k_query}-query set"
        )
    query = [int(i) for i in rng.choice(rest, size=k_query, replace=False)]
    return Episode(task_id=task_id, support=tuple(support), query=tuple(query))


def episodes_to_jsonl(episodes: list[Episode], path: str | Path) -> None:
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(ep.to_json() + "\n")


def episodes_from_jsonl(path: str | Path) -> list[Episode]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                raw = json.loads(line)
                out.append(
                    Episode(raw["task_id"], tuple(raw["support"]), tuple(raw["query"]))
                )
    return out
