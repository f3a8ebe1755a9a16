"""Stochastic embedding swaps over a label knowledge graph.

Training examples whose classes match are linked in a graph with one
node per (sample, modality). At each training step a sample may hop to
a neighbour and train on that neighbour's features instead: with
probability 1 - p0 it stays put, and the remaining p0 is shared among
the other nodes so that a connected (same class) node receives rho
times the probability of an unconnected one.

The image side hops within image nodes using image labels. The text
side also hops within text nodes, but a candidate counts as connected
when its TEXT label equals the anchor sample's IMAGE label, which pulls
the text toward agreeing with the image. Setting p0 = 1 on the text
side forces a hop and is how label-inconsistent pairs are repaired
during training.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .kernel import Rng


@dataclass(frozen=True)
class SSEParams:
    p0: float
    rho: float

    def __post_init__(self):
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError(f"p0 must be in [0, 1], got {self.p0}")
        if self.rho <= 0.0:
            raise ValueError(f"rho must be positive, got {self.rho}")


class KnowledgeGraph:
    """Same-class edges within and across modalities, derived from labels.

    Edges are implicit in the label arrays (the graph is a union of label
    cliques), so adjacency queries are O(n) vector compares and nothing
    quadratic is stored.
    """

    def __init__(self, labels_image, labels_text, ids=None):
        if len(labels_image) != len(labels_text):
            raise ValueError("modality label lists must have equal length")
        self.labels_image = np.asarray(labels_image, dtype=object)
        self.labels_text = np.asarray(labels_text, dtype=object)
        self.ids = list(ids) if ids is not None else [str(i) for i in range(len(labels_image))]
        if len(self.ids) != len(self.labels_image):
            raise ValueError("ids must parallel the label lists")

    @property
    def n(self) -> int:
        return self.labels_image.shape[0]

    def connected(self, i: int, modality: str) -> np.ndarray:
        """Boolean adjacency row for node i of the given modality (self False).

        Image rows link image nodes of the same image class. Text rows use
        the cross-modal rule: text node j is connected when its text label
        equals the IMAGE label of anchor i.
        """
        if modality == "image":
            conn = self.labels_image == self.labels_image[i]
        elif modality == "text":
            conn = self.labels_text == self.labels_image[i]
        else:
            raise ValueError(f"unknown modality {modality!r}")
        conn = conn.copy()
        conn[i] = False
        return conn

    # edge views for inspection and tests; O(n^2), meant for small graphs
    def image_edges(self) -> set[tuple[int, int]]:
        return {
            (i, j)
            for i in range(self.n)
            for j in range(i + 1, self.n)
            if self.labels_image[i] == self.labels_image[j]
        }

    def text_edges(self) -> set[tuple[int, int]]:
        return {
            (i, j)
            for i in range(self.n)
            for j in range(i + 1, self.n)
            if self.labels_text[i] == self.labels_text[j]
        }

    def cross_edges(self) -> set[tuple[int, int]]:
        """(image node, text node) pairs with equal class, self pairs included."""
        return {
            (i, j)
            for i in range(self.n)
            for j in range(self.n)
            if self.labels_image[i] == self.labels_text[j]
        }


def build_graph(labels_image, labels_text, ids=None) -> KnowledgeGraph:
    return KnowledgeGraph(labels_image, labels_text, ids)


def transition_row(graph: KnowledgeGraph, i: int, params: SSEParams, modality: str = "image") -> np.ndarray:
    """Closed-form hop distribution for node i.

    stay:        1 - p0
    connected:   p0 * rho / (rho * n_c + n_u)   each
    unconnected: p0       / (rho * n_c + n_u)   each

    A node with no other nodes at all keeps probability 1 on itself.
    """
    n = graph.n
    conn = graph.connected(i, modality)
    n_c = int(np.count_nonzero(conn))
    n_u = n - 1 - n_c
    row = np.zeros(n)
    if n_c + n_u == 0:
        row[i] = 1.0
        return row
    row[i] = 1.0 - params.p0
    denom = params.rho * n_c + n_u
    unconn = ~conn
    unconn[i] = False
    row[conn] = params.p0 * params.rho / denom
    row[unconn] = params.p0 / denom
    return row


def build_table(graph: KnowledgeGraph, params: SSEParams, modality: str = "image") -> np.ndarray:
    """Full n x n row-stochastic transition table."""
    if graph.n == 0:
        return np.zeros((0, 0))
    return np.stack([transition_row(graph, i, params, modality) for i in range(graph.n)])


def sample_transition(graph: KnowledgeGraph, i: int, params: SSEParams, rng: Rng, modality: str = "image") -> int:
    row = transition_row(graph, i, params, modality)
    return int(rng.choice(graph.n, p=row))


def transition_pair(
    i: int,
    graph: KnowledgeGraph,
    params_image: SSEParams | None,
    params_text: SSEParams | None,
    rng: Rng,
    force_text: bool = False,
):
    """Draw (image index, text index, training label) for sample i.

    The two modalities hop independently. force_text overrides the text
    side's stay probability to zero (p0 = 1), guaranteeing a hop; the
    training label is always the anchor's image label.
    """
    j = sample_transition(graph, i, params_image, rng, "image") if params_image is not None else i
    if force_text:
        pt = replace(params_text, p0=1.0) if params_text is not None else None
        if pt is None:
            raise ValueError("force_text needs text-side SSE parameters")
    else:
        pt = params_text
    k = sample_transition(graph, i, pt, rng, "text") if pt is not None else i
    return j, k, graph.labels_image[i]


def apply_sse(
    i: int,
    features_image,
    features_text,
    params_image: SSEParams | None,
    params_text: SSEParams | None,
    graph: KnowledgeGraph,
    rng: Rng,
    force_text: bool = False,
):
    """Swap sample i's features along graph hops.

    features_image / features_text are indexable pools aligned with the
    graph nodes. Returns (image feature, text feature, training label);
    shapes pass through untouched.
    """
    j, k, label = transition_pair(i, graph, params_image, params_text, rng, force_text)
    return features_image[j], features_text[k], label


def write_table_csv(path, graph: KnowledgeGraph, params: SSEParams, modality: str = "image"):
    """Dump the transition table, one row per node: id, then probabilities."""
    table = build_table(graph, params, modality)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id"] + list(graph.ids))
        for node_id, row in zip(graph.ids, table):
            writer.writerow([node_id] + [repr(float(v)) for v in row])
