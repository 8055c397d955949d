"""Molecular fingerprints, protein composition vectors, scaffold keys.

The circular fingerprint is the standard neighborhood-hashing construction:
every atom starts from a code mixing its invariants, each round rehashes
the code with the sorted (bond order, neighbor code) list, and every code
from every round folds into a fixed-width bit vector. Hashing is our own
64-bit mixer over plain integers, so fingerprints are reproducible across
platforms and interpreter builds (python's built-in hash is salted per
process and useless here).
"""

from __future__ import annotations

import numpy as np

from .proteins import CANONICAL_RESIDUES, EmptySequence
from .smiles import MolecularGraph

N_BITS = 2048
PSC_DIM = 420
EMPTY_SCAFFOLD = "acyclic"


class LengthMismatch(ValueError):
    pass


class ZeroVector(ValueError):
    pass


_MASK = (1 << 64) - 1


def _splitmix(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _mix(*values: int) -> int:
    h = 0x243F6A8885A308D3
    for v in values:
        h = _splitmix(h ^ (v & _MASK))
    return h


def _atom_codes(graph: MolecularGraph) -> list[int]:
    codes = []
    for a in graph.atoms:
        element = int.from_bytes(a.element.encode("ascii"), "big")
        codes.append(_mix(element, a.degree, a.formal_charge & _MASK, int(a.is_aromatic), a.implicit_h_count))
    return codes


def ecfp(graph: MolecularGraph, radius: int = 2, n_bits: int = N_BITS) -> np.ndarray:
    """Circular fingerprint as a 0/1 vector of length n_bits."""
    codes = _atom_codes(graph)
    neighbors = graph.neighbors()
    seen: set[int] = set(codes)
    for _ in range(radius):
        nxt = []
        for i, code in enumerate(codes):
            if not neighbors[i]:
                nxt.append(code)  # isolated environment is its own fixpoint
                continue
            env = sorted((order, codes[j]) for j, order in neighbors[i])
            flat: list[int] = [code]
            for order, nc in env:
                flat.append(order)
                flat.append(nc)
            nxt.append(_mix(*flat))
        codes = nxt
        seen.update(codes)
    out = np.zeros(n_bits, dtype=np.uint8)
    for code in seen:
        out[code % n_bits] = 1
    return out


def fp_to_hex(fp: np.ndarray) -> str:
    return np.packbits(fp.astype(np.uint8)).tobytes().hex()


def hex_to_fp(hexstr: str, n_bits: int = N_BITS) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes.fromhex(hexstr), dtype=np.uint8))[:n_bits]


def psc(sequence: str) -> np.ndarray:
    """Protein sequence composition: 20 residue frequencies + 400 dipeptide
    frequencies, each block normalized to sum 1. Residues outside the 20
    canonical letters are ignored by both blocks."""
    seq = sequence.strip().upper()
    if not seq:
        raise EmptySequence("cannot featurize an empty sequence")
    index = {r: i for i, r in enumerate(CANONICAL_RESIDUES)}
    out = np.zeros(PSC_DIM)
    total = 0
    for ch in seq:
        i = index.get(ch)
        if i is not None:
            out[i] += 1.0
            total += 1
    if total:
        out[:20] /= total
    pairs = 0
    for a, b in zip(seq, seq[1:]):
        ia, ib = index.get(a), index.get(b)
        if ia is not None and ib is not None:
            out[20 + ia * 20 + ib] += 1.0
            pairs += 1
    if pairs:
        out[20:] /= pairs
    return out


def murcko_scaffold_key(graph: MolecularGraph) -> str:
    """Graph-invariant key of the ring-and-linker core.

    Peels degree <= 1 atoms until fixpoint (leaving rings plus the paths
    between them), then encodes the sorted multiset of per-atom
    (element, core degree, sorted core bond orders). Equal keys are all the
    split logic needs; rare collisions between distinct cores just merge
    two scaffold groups.
    """
    kept = set(range(graph.n_atoms))
    neighbors = graph.neighbors()
    while True:
        degrees = {
            i: sum(1 for j, _ in neighbors[i] if j in kept) for i in kept
        }
        drop = {i for i in kept if degrees[i] <= 1}
        if not drop:
            break
        kept -= drop
    if not kept:
        return EMPTY_SCAFFOLD
    descriptors = []
    for i in sorted(kept):
        orders = sorted(order for j, order in neighbors[i] if j in kept)
        degree = len(orders)
        descriptors.append(f"{graph.atoms[i].element}:{degree}:{','.join(map(str, orders))}")
    return "|".join(sorted(descriptors))


def jaccard_distance(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise LengthMismatch(f"fingerprint lengths differ: {a.shape} vs {b.shape}")
    aa = a != 0
    bb = b != 0
    union = int(np.logical_or(aa, bb).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(aa, bb).sum())
    return 1.0 - inter / union


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    if u.shape != v.shape:
        raise LengthMismatch(f"vector lengths differ: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < 1e-12 or nv < 1e-12:
        raise ZeroVector("cosine distance undefined for zero vectors")
    return float(1.0 - float(u @ v) / (nu * nv))
