"""Retrieval metrics over a code gallery: mAP and precision@k.

AP is computed over the full ranked gallery without cutoff or interpolation,
normalized by the number of relevant gallery items. Queries with no relevant
item in the gallery are skipped rather than scored 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import CodeBook, hamming_many


class NoRelevantItems(ValueError):
    """The gallery holds nothing sharing the query's label."""


def average_precision(ranked_labels, query_label) -> float:
    rel = np.asarray(ranked_labels) == query_label
    if rel.size == 0:
        raise ValueError("empty ranking")
    total = int(rel.sum())
    if total == 0:
        raise NoRelevantItems(f"no gallery item has label {query_label}")
    hits = np.cumsum(rel)
    positions = np.flatnonzero(rel) + 1
    return float(np.sum(hits[rel] / positions) / total)


def precision_at_k(ranked_labels, query_label, k: int) -> float:
    """Relevant items among the top ``k``, divided by ``k`` even if the gallery is shorter."""
    if k < 1:
        raise ValueError("k must be >= 1")
    top = np.asarray(ranked_labels)[:k]
    return float(np.sum(top == query_label) / k)


@dataclass
class EvalReport:
    map: float
    precision_at_k: dict[int, float]
    per_query_ap: list[float] = field(repr=False)
    n_queries: int
    n_skipped: int

    def to_keyvalue(self) -> str:
        lines = [f"map={self.map!r}"]
        lines += [f"p_at_{k}={v!r}" for k, v in sorted(self.precision_at_k.items())]
        lines += [f"n_queries={self.n_queries}", f"n_skipped={self.n_skipped}"]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = [("metric", "value"), ("mAP", f"{self.map:.4f}")]
        rows += [(f"precision@{k}", f"{v:.4f}") for k, v in sorted(self.precision_at_k.items())]
        rows += [("queries", str(self.n_queries)), ("skipped", str(self.n_skipped))]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a:<{width}}  {b}" for a, b in rows) + "\n"


def parse_keyvalue(text: str) -> dict[str, str]:
    return dict(line.split("=", 1) for line in text.splitlines() if line.strip())


def evaluate(gallery: CodeBook, queries, k_list=(100,)) -> EvalReport:
    """Rank the gallery for every ``(label, HashCode)`` query and aggregate.

    Accepts a query :class:`CodeBook` in place of the list.
    """
    if len(gallery) == 0:
        raise ValueError("empty gallery")
    if isinstance(queries, CodeBook):
        if queries.n_bits != gallery.n_bits:
            raise ValueError(f"code length mismatch: queries {queries.n_bits} bits, gallery {gallery.n_bits}")
        q_labels, q_words = queries.labels, queries.words
    else:
        queries = list(queries)
        for _, code in queries:
            if code.n_bits != gallery.n_bits:
                raise ValueError(f"code length mismatch: query {code.n_bits} bits, gallery {gallery.n_bits}")
        q_labels = np.array([lbl for lbl, _ in queries], dtype=np.int64)
        q_words = np.stack([c.words for _, c in queries]) if queries else np.zeros((0, 1), np.uint64)
    k_list = sorted({int(k) for k in k_list})
    if any(k < 1 for k in k_list):
        raise ValueError("k values must be >= 1")

    aps: list[float] = []
    prec = {k: [] for k in k_list}
    skipped = 0
    for label, words in zip(q_labels, q_words):
        dist = hamming_many(gallery.words, words)
        ranked = gallery.labels[np.argsort(dist, kind="stable")]
        try:
            aps.append(average_precision(ranked, label))
        except NoRelevantItems:
            skipped += 1
            continue
        for k in k_list:
            prec[k].append(precision_at_k(ranked, label, k))
    if not aps:
        raise ValueError("every query was skipped: no query label occurs in the gallery")
    return EvalReport(
        map=float(np.mean(aps)),
        precision_at_k={k: float(np.mean(v)) for k, v in prec.items()},
        per_query_ap=aps,
        n_queries=len(q_labels),
        n_skipped=skipped,
    )
