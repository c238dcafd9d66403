"""
Biased random walks and skip-gram training with negative sampling.

Walks follow the second-order node2vec bias over a ``WeightedGraph``; the
skip-gram stage runs on gensim's ``Word2Vec`` and reports a probe loss per
epoch using the same torch loss kernel that the patient trainer and the
gradient checks use.
"""

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from django.core.exceptions import ValidationError
from gensim.models import Word2Vec
from gensim.models.callbacks import CallbackAny2Vec

from .models import EmbeddingTable
from .sampling import AliasTable, seeded_rng

logger = logging.getLogger(__name__)

PROBE_PAIRS = 512

# stream keys for seeded_rng
_INIT_STREAM = 1
_PROBE_STREAM = 2
_ISOLATED_STREAM = 3


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 10
    walk_length: int = 80
    return_param: float = 1.0
    inout_param: float = 1.0
    seed: int = 0

    def __post_init__(self):
        errors = {}
        if self.walks_per_node < 1:
            errors['walks_per_node'] = 'Must be a positive count.'
        if self.walk_length < 2:
            errors['walk_length'] = 'Must be at least 2.'
        if not self.return_param > 0:
            errors['return_param'] = 'Must be positive.'
        if not self.inout_param > 0:
            errors['inout_param'] = 'Must be positive.'
        if errors:
            raise ValidationError(errors)


@dataclass(frozen=True)
class SgnsConfig:
    dim: int = 128
    window: int = 10
    negatives: int = 10
    epochs: int = 5
    learning_rate: float = 0.025
    min_learning_rate: float = 0.0001
    seed: int = 0

    def __post_init__(self):
        errors = {}
        for name in ('dim', 'window', 'negatives', 'epochs'):
            if getattr(self, name) < 1:
                errors[name] = 'Must be a positive count.'
        if not self.learning_rate > 0:
            errors['learning_rate'] = 'Must be positive.'
        if not 0 < self.min_learning_rate <= self.learning_rate:
            errors['min_learning_rate'] = 'Must be positive and at most learning_rate.'
        if errors:
            raise ValidationError(errors)


## Walks

class BiasedWalker:
    """
    Second-order walker over a WeightedGraph.

    Stepping from v having arrived from t picks x with unnormalized
    probability weight(v, x) * bias, where bias is 1/p for x == t, 1 when x
    is a neighbour of t and 1/q otherwise. Alias tables are built lazily and
    cached per (t, v); with p = q = 1 the bias vanishes and tables are cached
    per v only.
    """

    def __init__(self, graph, return_param=1.0, inout_param=1.0):
        self.graph = graph
        self.return_param = return_param
        self.inout_param = inout_param
        self.unbiased = return_param == 1.0 and inout_param == 1.0
        self._first = {}
        self._second = {}

    def first_step_table(self, v):
        table = self._first.get(v)
        if table is None:
            _, weights = self.graph.neighbors(v)
            table = self._first[v] = AliasTable(weights)
        return table

    def transition_probs(self, t, v):
        neighbors, weights = self.graph.neighbors(v)
        if self.unbiased:
            return weights / weights.sum()

        previous, _ = self.graph.neighbors(t)
        bias = np.where(np.isin(neighbors, previous), 1.0, 1.0 / self.inout_param)
        bias[neighbors == t] = 1.0 / self.return_param
        probs = weights * bias
        return probs / probs.sum()

    def step_table(self, t, v):
        if self.unbiased:
            return self.first_step_table(v)
        table = self._second.get((t, v))
        if table is None:
            table = self._second[(t, v)] = AliasTable(self.transition_probs(t, v))
        return table

    # Walk of at most `length` vertex indices starting at `start`
    def walk(self, start, length, rng):
        uniforms = rng.random((length, 2))
        path = [start]
        while len(path) < length:
            v = path[-1]
            neighbors, _ = self.graph.neighbors(v)
            if not len(neighbors):
                break
            u_column, u_coin = uniforms[len(path)]
            if len(path) == 1:
                table = self.first_step_table(v)
            else:
                table = self.step_table(path[-2], v)
            path.append(int(neighbors[table.pick(u_column, u_coin)]))
        return path


def generate_walks(graph, cfg, workers=1):
    if not len(graph):
        raise ValidationError('cannot walk an empty graph')

    walker = BiasedWalker(graph, cfg.return_param, cfg.inout_param)
    starts = np.flatnonzero(np.diff(graph.weights.indptr) > 0)

    def one_walk(round_no, start):
        rng = seeded_rng(cfg.seed, round_no, start)
        return [graph.nodes[i] for i in walker.walk(int(start), cfg.walk_length, rng)]

    walks = []
    for round_no in range(cfg.walks_per_node):
        order = seeded_rng(cfg.seed, round_no).permutation(starts)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                walks.extend(pool.map(lambda start: one_walk(round_no, start), order))
        else:
            walks.extend(one_walk(round_no, start) for start in order)

    logger.info('generated %d walks over %d start vertices', len(walks), len(starts))
    return walks


## Loss kernel

def sgns_loss(center, context, negatives, weights=None):
    """
    Negative-sampling loss summed over a batch.

    center and context are (n, d), negatives is (n, k, d); every row
    contributes -w * [log sigmoid(context . center) + sum log sigmoid(-neg . center)].
    """
    positive = F.logsigmoid((center * context).sum(-1))
    negative = F.logsigmoid(-torch.matmul(negatives, center.unsqueeze(-1)).squeeze(-1)).sum(-1)
    loss = -(positive + negative)
    if weights is not None:
        loss = loss * weights
    return loss.sum()


## Skip-gram training

class ProbeLoss(CallbackAny2Vec):
    """Mean SGNS loss of a fixed (center, context, negatives) batch, measured before training and after every epoch."""

    def __init__(self, centers, contexts, negatives):
        self.centers = torch.as_tensor(centers, dtype=torch.long)
        self.contexts = torch.as_tensor(contexts, dtype=torch.long)
        self.negatives = torch.as_tensor(negatives, dtype=torch.long)
        self.losses = []

    def measure(self, model):
        vectors = torch.from_numpy(np.asarray(model.wv.vectors, dtype=np.float64))
        outputs = torch.from_numpy(np.asarray(model.syn1neg, dtype=np.float64))
        with torch.no_grad():
            loss = sgns_loss(vectors[self.centers], outputs[self.contexts], outputs[self.negatives])
        self.losses.append(loss.item() / len(self.centers))

    def on_train_begin(self, model):
        self.measure(model)

    def on_epoch_end(self, model):
        self.measure(model)
        logger.info('sgns epoch %d: probe loss %.6f', len(self.losses) - 1, self.losses[-1])


class SkipGramTrainer:

    def __init__(self, cfg, workers=1):
        self.cfg = cfg
        self.workers = workers
        self.model = None
        self.probe = None

    @property
    def probe_losses(self):
        return self.probe.losses if self.probe else []

    def probe_batch(self, walks, index):
        rng = seeded_rng(self.cfg.seed, _PROBE_STREAM)
        lengths = np.array([len(walk) for walk in walks])
        usable = np.flatnonzero(lengths > 1)
        if not len(usable):
            return None

        centers, contexts = [], []
        for _ in range(PROBE_PAIRS):
            walk = walks[usable[rng.integers(len(usable))]]
            i = int(rng.integers(len(walk)))
            lo, hi = max(0, i - self.cfg.window), min(len(walk), i + self.cfg.window + 1)
            j = int(rng.integers(lo, hi - 1))
            j += j >= i
            centers.append(index[walk[i]])
            contexts.append(index[walk[j]])

        counts = Counter(token for walk in walks for token in walk)
        frequencies = np.zeros(len(index))
        for token, count in counts.items():
            frequencies[index[token]] = count
        negatives = AliasTable.from_weights(frequencies, 0.75).draw(rng, (PROBE_PAIRS, self.cfg.negatives))
        return ProbeLoss(centers, contexts, negatives)

    def fit(self, walks, entity_type='service', update_scales=None):
        walks = [list(walk) for walk in walks if len(walk)]
        if not walks:
            raise ValidationError('empty vocabulary: no walks to train on')

        cfg = self.cfg
        self.model = model = Word2Vec(
            vector_size=cfg.dim, window=cfg.window, min_count=1, sg=1, hs=0,
            negative=cfg.negatives, ns_exponent=0.75, sample=0,
            alpha=cfg.learning_rate, min_alpha=cfg.min_learning_rate,
            seed=cfg.seed % 2 ** 32, workers=self.workers,
            sorted_vocab=0, shrink_windows=False,
        )
        model.build_vocab(walks)

        # vocabulary order is first appearance in the walks
        vectors = seeded_rng(cfg.seed, _INIT_STREAM).uniform(-0.5 / cfg.dim, 0.5 / cfg.dim, model.wv.vectors.shape)
        model.wv.vectors[:] = vectors

        # per-token multiplier on input-vector updates
        if update_scales:
            model.wv.vectors_lockf = np.array(
                [update_scales.get(token, 1.0) for token in model.wv.index_to_key], dtype=np.float32)

        self.probe = self.probe_batch(walks, model.wv.key_to_index)
        callbacks = [self.probe] if self.probe else []
        model.train(walks, total_examples=len(walks), epochs=cfg.epochs, callbacks=callbacks)

        ids = list(model.wv.index_to_key)
        return EmbeddingTable(entity_type, ids, model.wv.vectors)


def train_sgns(walks, cfg, entity_type='service', workers=1, update_scales=None):
    return SkipGramTrainer(cfg, workers).fit(walks, entity_type, update_scales)


# Every non-isolated vertex starts the same number of walks, so a vertex with
# little edge weight is over-represented as a walk start; its updates are
# scaled down to its weighted degree relative to the mean
def visit_rate_scales(graph):
    degrees = np.asarray(graph.weights.sum(axis=1), dtype=np.float64).ravel()
    connected = degrees > 0
    if not connected.any():
        return {}
    mean = degrees[connected].mean()
    return {node: min(1.0, degrees[i] / mean) for i, node in enumerate(graph.nodes) if connected[i]}


def embed_services(graph, walk_cfg, sgns_cfg, workers=1, entity_type='service', scale_by_degree=True):
    if not len(graph):
        raise ValidationError('service graph is empty')

    walks = generate_walks(graph, walk_cfg, workers)
    scales = visit_rate_scales(graph) if scale_by_degree else None
    parts = []
    if walks:
        parts.append(train_sgns(walks, sgns_cfg, entity_type, workers, scales))

    isolated = graph.isolated()
    if isolated:
        logger.info('%d isolated vertices keep their initial vectors', len(isolated))
        rng = seeded_rng(sgns_cfg.seed, _ISOLATED_STREAM)
        vectors = rng.uniform(-0.5 / sgns_cfg.dim, 0.5 / sgns_cfg.dim, (len(isolated), sgns_cfg.dim))
        parts.append(EmbeddingTable(entity_type, isolated, vectors))

    ids, rows = [], []
    for table in parts:
        ids.extend(table.ids)
        rows.append(table.vectors)
    table = EmbeddingTable(entity_type, ids, np.vstack(rows))
    return table.subset(graph.nodes)
