"""
Patient embeddings from the attributed patient-service multigraph.

Every (patient, doctor, service) triple becomes an edge of the multigraph;
duplication & annotation turns each distinct (service, doctor) pair into one
hybrid node whose vector is a trainable linear map of the frozen service and
doctor vectors. Patients are then fit to their hybrid-node distribution with
the second-order objective, approximated during training by negative
sampling.
"""

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from django.core.exceptions import ValidationError
from torch import nn

from .doctor_attention import masked_softmax
from .models import EmbeddingTable, load_params, save_params
from .sampling import AliasTable, seeded_rng
from .sgns import sgns_loss

logger = logging.getLogger(__name__)

_INIT_STREAM = 1
_EPOCH_STREAM = 2


## Graphs

@dataclass(frozen=True)
class PatientMultigraph:
    # (patient_id, service_id, doctor_id, weight), sorted by (patient, service, doctor)
    edges: Tuple[Tuple[str, str, str, int], ...]

    def __post_init__(self):
        seen = set()
        for patient, service, doctor, weight in self.edges:
            if not isinstance(weight, int) or weight < 1:
                raise ValidationError('edge (%s, %s, %s) needs a positive integer weight' % (patient, service, doctor))
            if (patient, service, doctor) in seen:
                raise ValidationError('duplicate edge (%s, %s, %s)' % (patient, service, doctor))
            seen.add((patient, service, doctor))

    @property
    def total_weight(self):
        return sum(edge[3] for edge in self.edges)


def build_multigraph(events):
    counts = Counter((e.patient_id, e.service_id, e.doctor_id) for e in events)
    return PatientMultigraph(tuple(key + (count,) for key, count in sorted(counts.items())))


# Weighted simple bipartite graph between patients and context nodes
@dataclass(eq=False)
class PatientContextGraph:
    patients: List[str]
    contexts: List
    # (patient_id, context_index, weight)
    edges: List[Tuple[str, int, int]]
    patient_totals: Dict[str, int] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.patients = list(self.patients)
        self.contexts = list(self.contexts)
        self.edges = list(self.edges)
        self._patient_index = {patient: i for i, patient in enumerate(self.patients)}

        if len(self._patient_index) != len(self.patients):
            raise ValidationError('patient ids must be unique')
        pairs = {(patient, context) for patient, context, _ in self.edges}
        if len(pairs) != len(self.edges):
            raise ValidationError('parallel edges are not allowed')
        for patient, context, weight in self.edges:
            if patient not in self._patient_index or not 0 <= context < len(self.contexts) or weight < 1:
                raise ValidationError('invalid edge (%s, %s, %s)' % (patient, context, weight))

        self.edge_patients = np.array([self._patient_index[e[0]] for e in self.edges], dtype=np.int64)
        self.edge_contexts = np.array([e[1] for e in self.edges], dtype=np.int64)
        self.edge_weights = np.array([e[2] for e in self.edges], dtype=np.int64)

        totals = defaultdict(int)
        for patient, _, weight in self.edges:
            totals[patient] += weight
        self.patient_totals = dict(totals)

    def patient_index(self, patient):
        return self._patient_index[patient]

    def neighborhood(self, patient):
        return [(context, weight) for p, context, weight in self.edges if p == patient]

    @property
    def total_weight(self):
        return int(self.edge_weights.sum())

    def context_degree(self):
        return np.bincount(self.edge_contexts, weights=self.edge_weights, minlength=len(self.contexts))


class HybridBipartiteGraph(PatientContextGraph):

    @property
    def hybrid_nodes(self):
        return self.contexts


def duplicate_and_annotate(multigraph):
    hybrid_nodes = sorted({(service, doctor) for _, service, doctor, _ in multigraph.edges})
    hybrid_index = {pair: i for i, pair in enumerate(hybrid_nodes)}
    patients = sorted({edge[0] for edge in multigraph.edges})
    edges = [(patient, hybrid_index[(service, doctor)], weight)
             for patient, service, doctor, weight in multigraph.edges]

    graph = HybridBipartiteGraph(patients, hybrid_nodes, edges)
    logger.info('hybrid graph: %d patients, %d hybrid nodes, %d edges',
                len(graph.patients), len(hybrid_nodes), len(edges))
    return graph


def save_hybrid_graph(graph, path):
    with open(path, 'w') as out:
        for patient, index, weight in graph.edges:
            service, doctor = graph.hybrid_nodes[index]
            out.write('%s\t%s|%s\t%d\n' % (patient, service, doctor, weight))


## Annotation transform and exact objective

@dataclass(eq=False)
class AnnotationParams:
    W_a: np.ndarray
    b_a: np.ndarray

    def __post_init__(self):
        self.W_a = np.asarray(self.W_a, dtype=np.float64)
        self.b_a = np.asarray(self.b_a, dtype=np.float64)
        if self.W_a.ndim != 2 or self.b_a.shape != (self.W_a.shape[0],):
            raise ValidationError('W_a must be (p, p_svc + p_doc) and b_a must have p entries')
        if not (np.all(np.isfinite(self.W_a)) and np.all(np.isfinite(self.b_a))):
            raise ValidationError('annotation parameters must be finite')

    @property
    def dim(self):
        return self.W_a.shape[0]


def annotate(features, W_a, b_a):
    return F.linear(features, W_a, b_a)


# Concatenated [service || doctor] rows for the given (service, doctor) pairs
def hybrid_features(pairs, services, doctors):
    missing = [(s, d) for s, d in pairs if s not in services or d not in doctors]
    if missing:
        listed = ', '.join('%s|%s' % pair for pair in missing[:5])
        raise ValidationError('%d hybrid nodes lack a service or doctor embedding: %s' % (len(missing), listed))
    if not pairs:
        return np.zeros((0, services.dim + doctors.dim))
    return np.hstack([services.rows([s for s, _ in pairs]), doctors.rows([d for _, d in pairs])])


def hybrid_embedding(pair, services, doctors, params):
    features = torch.from_numpy(hybrid_features([pair], services, doctors))
    with torch.no_grad():
        return annotate(features, torch.from_numpy(params.W_a), torch.from_numpy(params.b_a))[0].numpy()


def context_distribution(p_k, hybrids):
    hybrids = np.asarray(hybrids, dtype=np.float64)
    if hybrids.size == 0:
        raise ValidationError('context probability needs at least one hybrid node')
    logits = torch.from_numpy(hybrids.reshape(len(hybrids), -1)) @ torch.from_numpy(np.asarray(p_k, dtype=np.float64))
    return masked_softmax(logits).numpy()


def context_probability(p_k, hybrids, target):
    return float(context_distribution(p_k, hybrids)[target])


def empirical_distribution(graph, patient):
    neighborhood = graph.neighborhood(patient)
    if not neighborhood:
        raise ValidationError('patient %s has no edges' % patient)
    total = sum(weight for _, weight in neighborhood)
    return {context: Fraction(weight, total) for context, weight in neighborhood}


# Sum over patients of the entropy of their empirical context distribution
def empirical_entropy(graph):
    entropy = 0.0
    for patient in graph.patients:
        for probability in empirical_distribution(graph, patient).values():
            entropy -= float(probability) * math.log(probability)
    return entropy


def second_order_kl(patient_vectors, context_vectors, edge_patients, edge_contexts, edge_weights, totals):
    log_probs = torch.log_softmax(patient_vectors @ context_vectors.T, dim=-1)
    return -(edge_weights / totals[edge_patients] * log_probs[edge_patients, edge_contexts]).sum()


def _edge_tensors(graph):
    totals = np.array([graph.patient_totals.get(p, 1) for p in graph.patients], dtype=np.float64)
    return (torch.from_numpy(graph.edge_patients), torch.from_numpy(graph.edge_contexts),
            torch.from_numpy(graph.edge_weights.astype(np.float64)), torch.from_numpy(totals))


def kl_loss(graph, patients, services, doctors, params):
    if patients.dim != params.dim:
        raise ValidationError('patient dim %d != annotation output dim %d' % (patients.dim, params.dim))
    if services.dim + doctors.dim != params.W_a.shape[1]:
        raise ValidationError('W_a expects %d input features, embeddings give %d'
                              % (params.W_a.shape[1], services.dim + doctors.dim))

    features = torch.from_numpy(hybrid_features(graph.hybrid_nodes, services, doctors))
    with torch.no_grad():
        hybrids = annotate(features, torch.from_numpy(params.W_a), torch.from_numpy(params.b_a))
        loss = second_order_kl(torch.from_numpy(patients.rows(graph.patients)), hybrids, *_edge_tensors(graph))
    return loss.item()


def negative_sampling_loss(patient_vectors, features, W_a, b_a, patients, positives, negatives, weights=None):
    return sgns_loss(
        patient_vectors[patients],
        annotate(features[positives], W_a, b_a),
        annotate(features[negatives], W_a, b_a),
        weights,
    )


## Training

@dataclass(frozen=True)
class PatientConfig:
    dim: int = 128
    negatives: int = 10
    epochs: int = 5
    learning_rate: float = 0.025
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        errors = {}
        for name in ('dim', 'negatives', 'epochs', 'batch_size'):
            if getattr(self, name) < 1:
                errors[name] = 'Must be a positive count.'
        if not self.learning_rate > 0:
            errors['learning_rate'] = 'Must be positive.'
        if errors:
            raise ValidationError(errors)


# Context vectors h = W_a [s || d] + b_a over frozen features
class AnnotatedContexts(nn.Module):

    def __init__(self, features, dim, rng):
        super().__init__()
        fan_in = features.shape[1]
        bound = 1.0 / math.sqrt(fan_in)
        self.register_buffer('features', torch.from_numpy(np.asarray(features, dtype=np.float64)))
        self.W_a = nn.Parameter(torch.from_numpy(rng.uniform(-bound, bound, (dim, fan_in))))
        self.b_a = nn.Parameter(torch.zeros(dim, dtype=torch.float64))

    def forward(self, index=None):
        features = self.features if index is None else self.features[index]
        return annotate(features, self.W_a, self.b_a)

    def params(self):
        return AnnotationParams(self.W_a.detach().numpy().copy(), self.b_a.detach().numpy().copy())


# Free context vectors, zero-initialised, for the plain second-order baseline
class FreeContexts(nn.Module):

    def __init__(self, count, dim):
        super().__init__()
        self.vectors = nn.Parameter(torch.zeros(count, dim, dtype=torch.float64))

    def forward(self, index=None):
        return self.vectors if index is None else self.vectors[index]


class SecondOrderModel(nn.Module):

    def __init__(self, n_patients, contexts, dim, rng):
        super().__init__()
        self.patients = nn.Parameter(torch.from_numpy(rng.uniform(-0.5 / dim, 0.5 / dim, (n_patients, dim))))
        self.contexts = contexts

    def forward(self, patients, positives, negatives):
        return sgns_loss(self.patients[patients], self.contexts(positives), self.contexts(negatives))


class SecondOrderTrainer:
    """
    Negative-sampling trainer shared by ME2Vec patients and the second-order
    baseline.

    An epoch visits every edge `weight` times in a seeded shuffle, in
    minibatches of cfg.batch_size samples. Negatives come from the
    weighted-degree^0.75 distribution over context nodes; a negative equal to
    its positive is redrawn. Patient and free context vectors take per-sample
    steps; the annotation transform takes batch-averaged steps. The learning
    rate decays linearly to 1e-4 of its initial value.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self.kl_history = []

    def negatives_for(self, positives, table, rng):
        if len(table) < 2:
            return np.zeros((len(positives), 0), dtype=np.int64)
        negatives = table.draw(rng, (len(positives), self.cfg.negatives))
        clash = negatives == positives[:, None]
        while clash.any():
            negatives[clash] = table.draw(rng, int(clash.sum()))
            clash = negatives == positives[:, None]
        return negatives

    def measure(self, model, edges):
        with torch.no_grad():
            kl = second_order_kl(model.patients, model.contexts(), *edges).item()
        self.kl_history.append(kl)
        return kl

    def fit(self, graph, contexts, model=None):
        cfg = self.cfg
        if not graph.edges:
            raise ValidationError('cannot train on a graph without edges')

        if model is None:
            model = SecondOrderModel(len(graph.patients), contexts, cfg.dim, seeded_rng(cfg.seed, _INIT_STREAM))
        table = AliasTable.from_weights(graph.context_degree(), 0.75)
        samples = np.repeat(np.arange(len(graph.edges)), graph.edge_weights)
        steps = cfg.epochs * math.ceil(len(samples) / cfg.batch_size)

        groups = [{'params': [model.patients], 'lr': cfg.learning_rate}]
        if isinstance(contexts, AnnotatedContexts):
            groups.append({'params': [contexts.W_a, contexts.b_a], 'lr': cfg.learning_rate / cfg.batch_size})
        else:
            groups.append({'params': list(contexts.parameters()), 'lr': cfg.learning_rate})
        optimizer = torch.optim.SGD(groups, lr=cfg.learning_rate)
        scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda step: max(1.0 - step / steps, 1e-4))

        edges = _edge_tensors(graph)
        self.measure(model, edges)
        for epoch in range(cfg.epochs):
            rng = seeded_rng(cfg.seed, _EPOCH_STREAM, epoch)
            order = samples[rng.permutation(len(samples))]
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                positives = graph.edge_contexts[batch]
                negatives = self.negatives_for(positives, table, rng)

                optimizer.zero_grad()
                loss = model(torch.from_numpy(graph.edge_patients[batch]), torch.from_numpy(positives),
                             torch.from_numpy(negatives))
                loss.backward()
                optimizer.step()
                scheduler.step()

            logger.info('second-order epoch %d: kl %.6f', epoch, self.measure(model, edges))

        table = EmbeddingTable('patient', graph.patients, model.patients.detach().numpy())
        return table, model


def train_patient_embeddings(graph, services, doctors, cfg):
    features = hybrid_features(graph.hybrid_nodes, services, doctors)
    contexts = AnnotatedContexts(features, cfg.dim, seeded_rng(cfg.seed, _INIT_STREAM, 1))
    trainer = SecondOrderTrainer(cfg)
    patients, _ = trainer.fit(graph, contexts)
    return patients, contexts.params()


def save_annotation_params(params, path):
    save_params(path, {'W_a': params.W_a, 'b_a': params.b_a})


def load_annotation_params(path):
    arrays, _ = load_params(path)
    return AnnotationParams(arrays['W_a'], arrays['b_a'])
