import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List

import numpy as np
from django.core.exceptions import ValidationError
from scipy import sparse

logger = logging.getLogger(__name__)


# Undirected weighted simple graph over string node ids
@dataclass(eq=False)
class WeightedGraph:
    nodes: List[str]
    weights: sparse.csr_matrix
    _index: Dict[str, int] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.nodes = list(self.nodes)
        self.weights = sparse.csr_matrix(self.weights)
        self.weights.eliminate_zeros()
        self.weights.sort_indices()

        size = len(self.nodes)
        if self.weights.shape != (size, size):
            raise ValidationError('weight matrix must be %d x %d' % (size, size))
        if len(set(self.nodes)) != size:
            raise ValidationError('node ids must be unique')
        if (self.weights != self.weights.T).nnz:
            raise ValidationError('weight matrix must be symmetric')
        if self.weights.diagonal().any():
            raise ValidationError('weight matrix must have a zero diagonal')
        if self.weights.nnz and self.weights.data.min() < 0:
            raise ValidationError('weights must be non-negative')

        self._index = {node: i for i, node in enumerate(self.nodes)}

    def __len__(self):
        return len(self.nodes)

    def index(self, node):
        return self._index[node]

    def weight(self, first, second):
        return self.weights[self._index[first], self._index[second]]

    def neighbors(self, i):
        start, end = self.weights.indptr[i], self.weights.indptr[i + 1]
        return self.weights.indices[start:end], self.weights.data[start:end]

    def degree(self, i):
        start, end = self.weights.indptr[i], self.weights.indptr[i + 1]
        return end - start

    @property
    def n_edges(self):
        return self.weights.nnz // 2

    # (first, second, weight) with first < second lexicographically
    def edges(self):
        upper = sparse.triu(self.weights, k=1).tocoo()
        edges = []
        for i, j, w in zip(upper.row, upper.col, upper.data):
            first, second = sorted((self.nodes[i], self.nodes[j]))
            edges.append((first, second, w))
        return sorted(edges)

    def isolated(self):
        degrees = np.diff(self.weights.indptr)
        return [node for node, d in zip(self.nodes, degrees) if d == 0]

    @classmethod
    def from_edges(cls, nodes, edge_weights, dtype=np.int64):
        nodes = list(nodes)
        index = {node: i for i, node in enumerate(nodes)}
        rows, cols, data = [], [], []
        for (first, second), weight in edge_weights.items():
            i, j = index[first], index[second]
            rows += [i, j]
            cols += [j, i]
            data += [weight, weight]
        weights = sparse.coo_matrix((np.array(data, dtype=dtype), (rows, cols)), shape=(len(nodes), len(nodes)))
        return cls(nodes, weights.tocsr())


# Service co-occurrence graph; row i of the matrix is services[i]
class ServiceGraph(WeightedGraph):

    @property
    def services(self):
        return self.nodes


## Co-occurrence counting

# Unordered distinct-service pairs, counted once per T-day window of one journey
def window_pairs(journey, window_days):
    if not journey:
        return Counter()

    start = min(event.day for event in journey)
    windows = defaultdict(set)
    for event in journey:
        windows[(event.day - start) // window_days].add(event.service_id)

    pairs = Counter()
    for services in windows.values():
        pairs.update(combinations(sorted(services), 2))
    return pairs


def build_cooccurrence(journeys, window_days, workers=1):
    if window_days < 1:
        raise ValidationError('window_days must be at least 1, got %r' % window_days)

    services = sorted({event.service_id for journey in journeys.values() for event in journey})
    patients = list(journeys)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(lambda p: window_pairs(journeys[p], window_days), patients))
    else:
        counts = [window_pairs(journeys[p], window_days) for p in patients]

    total = Counter()
    for pairs in counts:
        total.update(pairs)

    graph = ServiceGraph.from_edges(services, total)
    logger.info('co-occurrence graph: %d services, %d edges (T=%d)', len(graph), graph.n_edges, window_days)
    return graph


def degree_profile(graph):
    degrees = np.asarray(graph.weights.sum(axis=1)).ravel()
    return {node: degrees[i].item() for i, node in enumerate(graph.nodes)}


## Edge-list files

def save_graph(graph, path):
    with open(path, 'w') as out:
        for node in graph.isolated():
            out.write('# isolated\t%s\n' % node)
        for first, second, weight in graph.edges():
            out.write('%s\t%s\t%s\n' % (first, second, weight))


def load_graph(path, graph_class=ServiceGraph):
    nodes = set()
    edge_weights = {}
    with open(path) as lines:
        for line_no, line in enumerate(lines, start=1):
            line = line.rstrip('\n')
            if not line:
                continue
            if line.startswith('# isolated\t'):
                nodes.add(line.split('\t', 1)[1])
                continue
            if line.startswith('#'):
                continue

            parts = line.split('\t')
            if len(parts) != 3:
                raise ValidationError('%s: line %d: expected service_i<TAB>service_j<TAB>weight' % (path, line_no))
            first, second, weight = parts
            try:
                weight = int(weight)
            except ValueError:
                raise ValidationError('%s: line %d: weight must be an integer' % (path, line_no))
            if first == second or weight < 0:
                raise ValidationError('%s: line %d: invalid edge' % (path, line_no))

            nodes.update((first, second))
            edge_weights[(first, second)] = weight

    return graph_class.from_edges(sorted(nodes), edge_weights)
