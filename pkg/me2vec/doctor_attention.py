import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from django.core.exceptions import ValidationError
from torch import nn

from .ehr import doctor_service_counts
from .models import EmbeddingTable, load_params, save_params
from .sampling import seeded_rng, stratified_split

logger = logging.getLogger(__name__)

ACTIVATIONS = {
    'elu': F.elu,
    'relu': F.relu,
    'identity': lambda x: x,
}

_INIT_STREAM = 1
_SPLIT_STREAM = 2


@dataclass(frozen=True)
class DoctorServiceProfile:
    doctor_id: str
    neighbors: Tuple[Tuple[str, int], ...]

    def __post_init__(self):
        if any(count < 1 for _, count in self.neighbors):
            raise ValidationError('doctor %s: conduct counts must be at least 1' % self.doctor_id)

    @property
    def services(self):
        return [service for service, _ in self.neighbors]

    @property
    def counts(self):
        return np.array([count for _, count in self.neighbors], dtype=np.float64)


def build_profiles(events):
    return [
        DoctorServiceProfile(doctor, tuple(services.items()))
        for doctor, services in doctor_service_counts(events).items()
    ]


@dataclass(eq=False)
class AttentionParams:
    """
    Multi-head attention weights plus the specialty classifier.

    W has shape (K, p', p) and a has shape (K, 2p'); the first p' entries of
    a score the doctor side, the last p' the service side.
    """
    W: np.ndarray
    a: np.ndarray
    leaky_slope: float = 0.2
    activation: str = 'elu'
    classifier_weight: Optional[np.ndarray] = None
    classifier_bias: Optional[np.ndarray] = None
    classes: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        errors = {}
        if self.W.ndim != 3:
            errors['W'] = 'Expected shape (heads, head_dim, input_dim).'
        elif self.a.shape != (self.W.shape[0], 2 * self.W.shape[1]):
            errors['a'] = 'Expected shape (heads, 2 * head_dim).'
        if self.activation not in ACTIVATIONS:
            errors['activation'] = 'Must be one of %s.' % ', '.join(ACTIVATIONS)

        if self.classifier_weight is not None:
            self.classifier_weight = np.asarray(self.classifier_weight, dtype=np.float64)
            self.classifier_bias = np.asarray(self.classifier_bias, dtype=np.float64)
            rows = len(self.classes)
            if not errors and self.classifier_weight.shape != (rows, self.output_dim):
                errors['classifier_weight'] = 'Expected shape (classes, heads * head_dim).'
            if self.classifier_bias.shape != (rows,):
                errors['classifier_bias'] = 'Expected one bias per class.'

        arrays = [self.W, self.a, self.classifier_weight, self.classifier_bias]
        if not all(np.all(np.isfinite(x)) for x in arrays if x is not None):
            errors['W'] = 'All entries must be finite.'
        if errors:
            raise ValidationError(errors)

    @property
    def heads(self):
        return self.W.shape[0]

    @property
    def head_dim(self):
        return self.W.shape[1]

    @property
    def input_dim(self):
        return self.W.shape[2]

    @property
    def output_dim(self):
        return self.heads * self.head_dim


@dataclass(frozen=True)
class DoctorConfig:
    heads: int = 4
    head_dim: int = 32
    doctor_dim: int = 128
    epochs: int = 200
    learning_rate: float = 0.01
    holdout: float = 0.2
    leaky_slope: float = 0.2
    activation: str = 'elu'
    seed: int = 0

    def __post_init__(self):
        errors = {}
        for name in ('heads', 'head_dim', 'doctor_dim', 'epochs'):
            if getattr(self, name) < 1:
                errors[name] = 'Must be a positive count.'
        if not errors and self.heads * self.head_dim != self.doctor_dim:
            errors['doctor_dim'] = 'Must equal heads * head_dim (%d * %d).' % (self.heads, self.head_dim)
        if not 0 <= self.holdout < 1:
            errors['holdout'] = 'Must lie in [0, 1).'
        if self.activation not in ACTIVATIONS:
            errors['activation'] = 'Must be one of %s.' % ', '.join(ACTIVATIONS)
        if errors:
            raise ValidationError(errors)


@dataclass
class AccuracyReport:
    train_accuracy: float
    heldout_accuracy: Optional[float]
    n_train: int
    n_heldout: int
    losses: List[float] = field(default_factory=list)
    dropped: List[str] = field(default_factory=list)


## Attention kernel

def init_doctor_embedding(profile, services):
    if not profile.neighbors:
        raise ValidationError('doctor %s has no conducted services' % profile.doctor_id)
    unknown = [s for s in profile.services if s not in services]
    if unknown:
        raise ValidationError('doctor %s: unknown services %s' % (profile.doctor_id, ', '.join(unknown)))

    counts = profile.counts
    return counts @ services.rows(profile.services) / counts.sum()


# Softmax over the last axis with max subtraction; masked entries get 0
def masked_softmax(logits, mask=None):
    if mask is not None:
        logits = logits.masked_fill(~mask, float('-inf'))
    shifted = logits - logits.amax(dim=-1, keepdim=True)
    weights = torch.exp(shifted)
    return weights / weights.sum(dim=-1, keepdim=True)


def multihead_attention(doctors, services, mask, W, a, leaky_slope=0.2, activation='elu'):
    """
    Batched attention aggregation.

    doctors (n, p), services (n, m, p) padded with mask (n, m). Returns the
    coefficients (n, K, m) and the concatenated head outputs (n, K * p').
    """
    head_dim = W.shape[1]
    projected_doctors = torch.einsum('kqp,np->nkq', W, doctors)
    projected_services = torch.einsum('kqp,nmp->nkmq', W, services)

    logits = (projected_doctors * a[:, :head_dim]).sum(-1).unsqueeze(-1) \
        + (projected_services * a[:, None, head_dim:]).sum(-1)
    alpha = masked_softmax(F.leaky_relu(logits, leaky_slope), mask[:, None, :])

    heads = ACTIVATIONS[activation]((alpha.unsqueeze(-1) * projected_services).sum(-2))
    return alpha, heads.reshape(doctors.shape[0], -1)


def _attend_one(d, neighbor_services, params):
    neighbor_services = np.asarray(neighbor_services, dtype=np.float64)
    if neighbor_services.size == 0:
        raise ValidationError('attention needs at least one neighbour service')

    services = torch.from_numpy(neighbor_services.reshape(1, -1, params.input_dim))
    mask = torch.ones(services.shape[:2], dtype=torch.bool)
    with torch.no_grad():
        alpha, output = multihead_attention(
            torch.from_numpy(np.asarray(d, dtype=np.float64)).reshape(1, -1), services, mask,
            torch.from_numpy(params.W), torch.from_numpy(params.a), params.leaky_slope, params.activation,
        )
    return alpha[0].numpy(), output[0].numpy()


def attention_coefficients(d, neighbor_services, params, head):
    alpha, _ = _attend_one(d, neighbor_services, params)
    return alpha[head]


def aggregate_multihead(d, neighbor_services, params):
    _, output = _attend_one(d, neighbor_services, params)
    return output


def doctor_loss(doctors, W, a, classifier_weight, classifier_bias, services, mask, targets,
                leaky_slope=0.2, activation='elu'):
    _, output = multihead_attention(doctors, services, mask, W, a, leaky_slope, activation)
    return F.cross_entropy(F.linear(output, classifier_weight, classifier_bias), targets)


## Training

def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)


class DoctorAttention(nn.Module):

    def __init__(self, initial, cfg, n_classes):
        super().__init__()
        rng = seeded_rng(cfg.seed, _INIT_STREAM)
        p = initial.shape[1]
        self.cfg = cfg
        self.doctors = nn.Parameter(torch.from_numpy(initial.copy()))
        self.W = nn.Parameter(torch.from_numpy(_glorot(rng, (cfg.heads, cfg.head_dim, p), p, cfg.head_dim)))
        self.a = nn.Parameter(torch.from_numpy(_glorot(rng, (cfg.heads, 2 * cfg.head_dim), 2 * cfg.head_dim, 1)))
        self.classifier_weight = nn.Parameter(
            torch.from_numpy(_glorot(rng, (n_classes, cfg.doctor_dim), cfg.doctor_dim, n_classes)))
        self.classifier_bias = nn.Parameter(torch.zeros(n_classes, dtype=torch.float64))

    def embed(self, services, mask):
        _, output = multihead_attention(self.doctors, services, mask, self.W, self.a,
                                        self.cfg.leaky_slope, self.cfg.activation)
        return output

    def forward(self, services, mask):
        return F.linear(self.embed(services, mask), self.classifier_weight, self.classifier_bias)

    def params(self, classes):
        return AttentionParams(
            W=self.W.detach().numpy().copy(), a=self.a.detach().numpy().copy(),
            leaky_slope=self.cfg.leaky_slope, activation=self.cfg.activation,
            classifier_weight=self.classifier_weight.detach().numpy().copy(),
            classifier_bias=self.classifier_bias.detach().numpy().copy(),
            classes=list(classes),
        )


# Padded (n, m, p) service tensor and (n, m) mask for a list of profiles
def neighbor_tensors(profiles, services):
    width = max(len(profile.neighbors) for profile in profiles)
    padded = np.zeros((len(profiles), width, services.dim))
    mask = np.zeros((len(profiles), width), dtype=bool)
    for row, profile in enumerate(profiles):
        size = len(profile.neighbors)
        padded[row, :size] = services.rows(profile.services)
        mask[row, :size] = True
    return torch.from_numpy(padded), torch.from_numpy(mask)


def _accuracy(logits, targets, rows):
    if not len(rows):
        return None
    return (logits[rows].argmax(-1) == targets[rows]).double().mean().item()


def train_doctor_embeddings(profiles, specialties, services, cfg):
    trainable, dropped = [], []
    for profile in profiles:
        if profile.doctor_id not in specialties:
            raise ValidationError('doctor %s has no specialty' % profile.doctor_id)
        if not profile.neighbors or any(s not in services for s in profile.services):
            dropped.append(profile.doctor_id)
            continue
        trainable.append(profile)

    if dropped:
        logger.warning('dropped %d doctors with services missing from the service embedding: %s',
                       len(dropped), ', '.join(dropped))
    if not trainable:
        raise ValidationError('no trainable doctors')

    classes = sorted({specialties[p.doctor_id] for p in trainable})
    class_index = {label: i for i, label in enumerate(classes)}
    targets = torch.tensor([class_index[specialties[p.doctor_id]] for p in trainable], dtype=torch.long)

    if cfg.holdout > 0:
        train_rows, heldout_rows = stratified_split(targets.numpy(), 1 - cfg.holdout,
                                                    seeded_rng(cfg.seed, _SPLIT_STREAM))
    else:
        train_rows, heldout_rows = np.arange(len(trainable)), np.array([], dtype=np.int64)
    train_rows, heldout_rows = torch.from_numpy(train_rows), torch.from_numpy(heldout_rows)

    initial = np.array([init_doctor_embedding(p, services) for p in trainable])
    neighbor_services, mask = neighbor_tensors(trainable, services)

    model = DoctorAttention(initial, cfg, len(classes))
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    losses = []
    for epoch in range(cfg.epochs):
        optimizer.zero_grad()
        logits = model(neighbor_services, mask)
        loss = F.cross_entropy(logits[train_rows], targets[train_rows])
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            logger.info('doctor epoch %d: loss %.6f', epoch, losses[-1])

    with torch.no_grad():
        embedded = model.embed(neighbor_services, mask)
        logits = F.linear(embedded, model.classifier_weight, model.classifier_bias)

    report = AccuracyReport(
        train_accuracy=_accuracy(logits, targets, train_rows),
        heldout_accuracy=_accuracy(logits, targets, heldout_rows),
        n_train=len(train_rows), n_heldout=len(heldout_rows),
        losses=losses, dropped=dropped,
    )
    logger.info('specialty accuracy: train %.3f, held out %s', report.train_accuracy,
                'n/a' if report.heldout_accuracy is None else '%.3f' % report.heldout_accuracy)

    table = EmbeddingTable('doctor', [p.doctor_id for p in trainable], embedded.numpy())
    return table, model.params(classes), report


## Parameter files

def save_attention_params(params, path):
    arrays = {'W': params.W, 'a': params.a}
    if params.classifier_weight is not None:
        arrays['classifier_weight'] = params.classifier_weight
        arrays['classifier_bias'] = params.classifier_bias
    meta = {'leaky_slope': repr(params.leaky_slope), 'activation': params.activation, 'classes': params.classes}
    save_params(path, arrays, meta)


def load_attention_params(path):
    arrays, meta = load_params(path)
    return AttentionParams(
        W=arrays['W'], a=arrays['a'],
        leaky_slope=float(meta['leaky_slope'][0]), activation=meta['activation'][0],
        classifier_weight=arrays.get('classifier_weight'), classifier_bias=arrays.get('classifier_bias'),
        classes=meta.get('classes', []),
    )
