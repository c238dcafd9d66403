import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError
from django.template.loader import render_to_string
from scipy.special import expit

from .models import EmbeddingTable
from .patient_multigraph import FreeContexts, PatientConfig, PatientContextGraph, SecondOrderTrainer
from .sampling import seeded_rng, stratified_split
from .service_graph import WeightedGraph
from .sgns import SgnsConfig, WalkConfig, embed_services

logger = logging.getLogger(__name__)

BIPARTITE_MODES = {'patient_service': 'service', 'patient_doctor': 'doctor'}
BASELINE_METHODS = ('node2vec', 'line2')
REPORT_COLUMNS = ['method', 'ratio', 'repeat', 'micro_f1', 'macro_f1']


@dataclass(frozen=True)
class EvalConfig:
    train_ratios: Tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    repeats: int = 10
    l2_lambda: float = 1.0
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        errors = {}
        if not self.train_ratios or not all(0 < r < 1 for r in self.train_ratios):
            errors['train_ratios'] = 'Ratios must lie strictly between 0 and 1.'
        if self.repeats < 1:
            errors['repeats'] = 'Must be a positive count.'
        if self.l2_lambda < 0:
            errors['l2_lambda'] = 'Must be non-negative.'
        if errors:
            raise ValidationError(errors)


## Logistic regression

@dataclass(eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float
    losses: List[float] = field(default_factory=list)

    def decision_function(self, X):
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, X):
        return expit(self.decision_function(X))

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)


# Mean logistic loss + l2_lambda * |w|^2 and its gradient; the bias is not penalised
def logistic_objective(X, y, weights, bias, l2_lambda):
    z = X @ weights + bias
    loss = np.logaddexp(0.0, -np.where(y == 1, z, -z)).mean() + l2_lambda * weights @ weights
    residual = (expit(z) - y) / len(y)
    return loss, X.T @ residual + 2 * l2_lambda * weights, residual.sum()


def train_logreg(X, y, l2_lambda=1.0, max_iter=10000, tol=1e-6):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValidationError('features must be finite')
    if len(np.unique(y)) < 2:
        raise ValidationError('logistic regression needs both classes in the training rows')

    # gradient step 1/L with L the Lipschitz constant of the objective's gradient
    augmented = np.hstack([X, np.ones((len(X), 1))])
    lipschitz = 0.25 * np.linalg.norm(augmented, 2) ** 2 / len(X) + 2 * l2_lambda
    step = 1.0 / lipschitz

    weights, bias = np.zeros(X.shape[1]), 0.0
    losses = []
    for _ in range(max_iter):
        loss, grad_w, grad_b = logistic_objective(X, y, weights, bias, l2_lambda)
        losses.append(loss)
        if np.sqrt(grad_w @ grad_w + grad_b ** 2) < tol:
            break
        weights = weights - step * grad_w
        bias = bias - step * grad_b
    return LogisticModel(weights, bias, losses)


def f1_scores(y_true, y_pred):
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if not len(y_true):
        raise ValidationError('f1 needs at least one prediction')
    if y_true.shape != y_pred.shape:
        raise ValidationError('labels and predictions differ in length')
    if not np.isin(y_true, (0, 1)).all() or not np.isin(y_pred, (0, 1)).all():
        raise ValidationError('labels must be 0 or 1')

    per_class = []
    pooled_tp = pooled_fp = pooled_fn = 0
    for label in (0, 1):
        tp = int(np.sum((y_pred == label) & (y_true == label)))
        fp = int(np.sum((y_pred == label) & (y_true != label)))
        fn = int(np.sum((y_pred != label) & (y_true == label)))
        pooled_tp, pooled_fp, pooled_fn = pooled_tp + tp, pooled_fp + fp, pooled_fn + fn
        per_class.append(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0)

    micro = 2 * pooled_tp / (2 * pooled_tp + pooled_fp + pooled_fn)
    return micro, sum(per_class) / 2


## Bipartite baselines

class BipartiteGraph(PatientContextGraph):

    def __init__(self, patients, contexts, edges, mode):
        self.mode = mode
        super().__init__(patients, contexts, edges)

    @property
    def context_kind(self):
        return BIPARTITE_MODES[self.mode]

    # Homogeneous weighted view with "patient:" / "<kind>:" prefixed node names
    def homogeneous(self):
        names = ['patient:' + p for p in self.patients] + ['%s:%s' % (self.context_kind, c) for c in self.contexts]
        offset = len(self.patients)
        weights = {
            (names[self.patient_index(patient)], names[offset + context]): weight
            for patient, context, weight in self.edges
        }
        return WeightedGraph.from_edges(names, weights)


def build_bipartite(events, mode):
    if mode not in BIPARTITE_MODES:
        raise ValidationError('unknown bipartite mode %r' % mode)
    attribute = 'service_id' if mode == 'patient_service' else 'doctor_id'

    counts = Counter((e.patient_id, getattr(e, attribute)) for e in events)
    patients = sorted({patient for patient, _ in counts})
    contexts = sorted({context for _, context in counts})
    index = {context: i for i, context in enumerate(contexts)}
    edges = [(patient, index[context], count) for (patient, context), count in sorted(counts.items())]
    return BipartiteGraph(patients, contexts, edges, mode)


@dataclass(frozen=True)
class BaselineConfig:
    walk: WalkConfig = WalkConfig()
    sgns: SgnsConfig = SgnsConfig()
    second_order: PatientConfig = PatientConfig()
    workers: int = 1


def run_baseline(graph, method, cfg):
    if not graph.edges:
        raise ValidationError('baseline graph is empty')

    if method == 'node2vec':
        table = embed_services(graph.homogeneous(), cfg.walk, cfg.sgns, cfg.workers, entity_type='patient',
                               scale_by_degree=False)
        rows = table.rows(['patient:' + p for p in graph.patients])
    elif method == 'line2':
        contexts = FreeContexts(len(graph.contexts), cfg.second_order.dim)
        table, _ = SecondOrderTrainer(cfg.second_order).fit(graph, contexts)
        rows = table.rows(graph.patients)
    else:
        raise ValidationError('unknown baseline method %r' % method)

    logger.info('%s baseline on %s graph: %d patients', method, graph.mode, len(graph.patients))
    return EmbeddingTable('patient', graph.patients, rows)


def concatenate_tables(first, second):
    ids = [entity_id for entity_id in first.ids if entity_id in second]
    return EmbeddingTable(first.entity_type, ids, np.hstack([first.rows(ids), second.rows(ids)]))


## Node classification protocol

@dataclass
class F1Report:
    rows: List[dict] = field(default_factory=list)
    ratios: Tuple[float, ...] = ()

    @property
    def methods(self):
        return list(dict.fromkeys(row['method'] for row in self.rows))

    def frame(self):
        return pd.DataFrame(self.rows, columns=REPORT_COLUMNS)

    # Mean and std over repeats per (method, ratio)
    def summary(self):
        grouped = self.frame().groupby(['method', 'ratio'], sort=False)
        table = grouped[['micro_f1', 'macro_f1']].agg(['mean', 'std']).fillna(0.0)
        table.columns = ['micro_mean', 'micro_std', 'macro_mean', 'macro_std']
        return table.reset_index()

    def score(self, method, ratio, metric='macro_mean'):
        summary = self.summary()
        match = summary[(summary['method'] == method) & np.isclose(summary['ratio'], ratio)]
        return float(match[metric].iloc[0])

    def to_csv(self, path):
        self.frame().to_csv(path, index=False, float_format='%.10f')

    def render(self):
        summary = self.summary()
        methods = []
        for method in self.methods:
            cells = summary[summary['method'] == method]
            methods.append({
                'name': method,
                'micro': list(zip(cells['micro_mean'], cells['micro_std'])),
                'macro': list(zip(cells['macro_mean'], cells['macro_std'])),
            })
        return render_to_string('me2vec/report.txt', {'ratios': self.ratios, 'methods': methods})


def _standardize(train, test):
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std == 0] = 1.0
    return (train - mean) / std, (test - mean) / std


def _score_cell(X, y, train, test, l2_lambda):
    X_train, X_test = _standardize(X[train], X[test])
    model = train_logreg(X_train, y[train], l2_lambda)
    return f1_scores(y[test], model.predict(X_test))


def evaluate_all(embeddings, labels, cfg, patients: Optional[List[str]] = None):
    patients = sorted(labels) if patients is None else list(patients)
    y = np.array([labels[p] for p in patients], dtype=np.int64)

    counts = np.bincount(y, minlength=2)
    if counts.min() < 2:
        raise ValidationError('every class needs at least two labelled patients, got %s' % counts.tolist())
    for method, table in embeddings.items():
        missing = [p for p in patients if p not in table]
        if missing:
            raise ValidationError('%s embeddings miss %d labelled patients' % (method, len(missing)))

    features = {method: table.rows(patients) for method, table in embeddings.items()}

    # one split per (ratio, repeat), shared by every method
    cells = []
    for r, ratio in enumerate(cfg.train_ratios):
        for repeat in range(cfg.repeats):
            train, test = stratified_split(y, ratio, seeded_rng(cfg.seed, r, repeat))
            for method in embeddings:
                cells.append((method, ratio, repeat, train, test))

    def score(cell):
        method, _, _, train, test = cell
        return _score_cell(features[method], y, train, test, cfg.l2_lambda)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            scores = list(pool.map(score, cells))
    else:
        scores = [score(cell) for cell in cells]

    rows = [
        {'method': method, 'ratio': ratio, 'repeat': repeat, 'micro_f1': micro, 'macro_f1': macro}
        for (method, ratio, repeat, _, _), (micro, macro) in zip(cells, scores)
    ]
    rows.sort(key=lambda row: (list(embeddings).index(row['method']), row['ratio'], row['repeat']))

    report = F1Report(rows, tuple(cfg.train_ratios))
    for method in embeddings:
        logger.info('%s: macro-F1 %.3f at ratio %.1f', method,
                    report.score(method, cfg.train_ratios[-1]), cfg.train_ratios[-1])
    return report
