"""
End-to-end pipeline: configuration, stages and the artifact manifest.

Each stage reads the artifacts of earlier stages from the output directory
and writes its own; a stage whose outputs all exist is skipped unless forced.
Finished stages send ``stage_completed`` so the manifest records a digest,
the config hash and the seed of every artifact.
"""

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass
from typing import Callable, Tuple

import torch
from django.conf import settings
from django.core.exceptions import ValidationError

from .doctor_attention import DoctorConfig, build_profiles, save_attention_params, train_doctor_embeddings
from .ehr import load_events, load_labels, load_specialties, sort_journeys
from .evaluation import (BIPARTITE_MODES, BASELINE_METHODS, BaselineConfig, EvalConfig, build_bipartite,
                         concatenate_tables, evaluate_all, run_baseline)
from .forms import PipelineConfigForm, form_error_text
from .models import EmbeddingTable
from .patient_multigraph import (PatientConfig, build_multigraph, duplicate_and_annotate, save_annotation_params,
                                 save_hybrid_graph, train_patient_embeddings)
from .projection import pca_project, save_projection_csv, save_scatter_svg
from .service_graph import build_cooccurrence, load_graph, save_graph
from .sgns import SgnsConfig, WalkConfig, embed_services
from .signals import file_digest, read_manifest, stage_completed

logger = logging.getLogger(__name__)

PATH_KEYS = ('events', 'specialties', 'labels', 'output_dir')
CONFIG_KEYS = tuple(settings.ME2VEC_DEFAULTS) + PATH_KEYS + ('events_format',)
ENV_OVERRIDES = {'HGE_SEED': 'seed', 'HGE_THREADS': 'threads'}
DEFAULT_OUTPUT_DIR = 'output'

# '#' opens a comment at the start of a line or after whitespace
_COMMENT = re.compile(r'(^|\s)#.*$')


## Configuration

class PipelineConfig:
    """Validated pipeline settings; keys are readable as attributes."""

    def __init__(self, values):
        self._values = dict(values)

    def __getattr__(self, name):
        try:
            return self._values[name]
        except KeyError:
            raise AttributeError(name)

    def as_dict(self):
        return dict(self._values)

    @property
    def workers(self):
        return 1 if self.threads == 'deterministic' else self.threads

    def path(self, filename):
        return os.path.join(self.output_dir, filename)

    def hash(self):
        hashed = {k: v for k, v in self._values.items() if k != 'output_dir'}
        return hashlib.sha256(json.dumps(hashed, sort_keys=True, default=str).encode()).hexdigest()

    def walk_config(self):
        return WalkConfig(self.walks_per_node, self.walk_length, self.return_param, self.inout_param, self.seed)

    def sgns_config(self, dim=None):
        return SgnsConfig(dim or self.service_dim, self.sgns_window, self.negatives, self.sgns_epochs,
                          self.sgns_learning_rate, self.sgns_min_learning_rate, self.seed)

    def doctor_config(self):
        return DoctorConfig(self.heads, self.head_dim, self.doctor_dim, self.doctor_epochs,
                            self.doctor_learning_rate, self.doctor_holdout, self.leaky_slope, self.activation,
                            self.seed)

    def patient_config(self):
        return PatientConfig(self.patient_dim, self.negatives, self.patient_epochs, self.patient_learning_rate,
                             self.patient_batch_size, self.seed)

    def eval_config(self):
        return EvalConfig(tuple(self.eval_train_ratios), self.eval_repeats, self.eval_l2_lambda, self.seed,
                          self.workers)

    def baseline_config(self):
        return BaselineConfig(self.walk_config(), self.sgns_config(self.patient_dim), self.patient_config(),
                              self.workers)


def read_config_file(path):
    values = {}
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as lines:
        for line_no, line in enumerate(lines, start=1):
            line = _COMMENT.sub('', line).strip()
            if not line:
                continue
            if '=' not in line:
                raise ValidationError('%s: line %d: expected "key = value"' % (path, line_no))
            key, value = (part.strip() for part in line.split('=', 1))
            if key not in CONFIG_KEYS:
                raise ValidationError('%s: line %d: unknown key %r' % (path, line_no, key))
            if key in PATH_KEYS and value:
                value = os.path.normpath(os.path.join(base, value))
            values[key] = value

    values.setdefault('output_dir', os.path.join(base, DEFAULT_OUTPUT_DIR))
    return values


def load_config(path=None, overrides=None, environ=None):
    environ = os.environ if environ is None else environ

    values = dict(settings.ME2VEC_DEFAULTS)
    values['eval_train_ratios'] = ','.join(str(r) for r in values['eval_train_ratios'])
    values['events_format'] = 'csv'
    values['output_dir'] = DEFAULT_OUTPUT_DIR

    if path:
        values.update(read_config_file(path))
    for variable, key in ENV_OVERRIDES.items():
        if environ.get(variable):
            values[key] = environ[variable]
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    form = PipelineConfigForm(data=values)
    if not form.is_valid():
        raise ValidationError('invalid configuration: %s' % form_error_text(form))
    return PipelineConfig(form.cleaned_data)


def configure_threads(cfg):
    torch.set_num_threads(cfg.workers)


## Stages

class StageError(Exception):

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        reason = '; '.join(cause.messages) if isinstance(cause, ValidationError) else str(cause)
        super().__init__('stage %s failed: %s' % (stage, reason))


def _require(cfg, *keys):
    missing = [key for key in keys if not getattr(cfg, key)]
    if missing:
        raise ValidationError('configuration lacks %s' % ', '.join(missing))


def _events(cfg):
    _require(cfg, 'events')
    return load_events(cfg.events, cfg.events_format)


def build_graph_stage(cfg):
    journeys = sort_journeys(_events(cfg))
    save_graph(build_cooccurrence(journeys, cfg.window_days, cfg.workers), cfg.path('graph.tsv'))


def train_services_stage(cfg):
    graph = load_graph(cfg.path('graph.tsv'))
    table = embed_services(graph, cfg.walk_config(), cfg.sgns_config(), cfg.workers)
    table.save(cfg.path('services.emb'))


def train_doctors_stage(cfg):
    _require(cfg, 'specialties')
    services = EmbeddingTable.load(cfg.path('services.emb'), 'service')
    profiles = build_profiles(_events(cfg))
    table, params, report = train_doctor_embeddings(profiles, load_specialties(cfg.specialties), services,
                                                    cfg.doctor_config())
    table.save(cfg.path('doctors.emb'))
    save_attention_params(params, cfg.path('attention.params'))


def train_patients_stage(cfg):
    services = EmbeddingTable.load(cfg.path('services.emb'), 'service')
    doctors = EmbeddingTable.load(cfg.path('doctors.emb'), 'doctor')
    graph = duplicate_and_annotate(build_multigraph(_events(cfg)))
    patients, params = train_patient_embeddings(graph, services, doctors, cfg.patient_config())
    patients.save(cfg.path('patients.emb'))
    save_annotation_params(params, cfg.path('annotation.params'))
    save_hybrid_graph(graph, cfg.path('hybrid_graph.tsv'))


def method_embeddings(cfg, events, patients):
    embeddings = {'me2vec': patients}
    baseline_cfg = cfg.baseline_config()
    graphs = {mode: build_bipartite(events, mode) for mode in BIPARTITE_MODES}
    for method in BASELINE_METHODS:
        for mode, graph in graphs.items():
            embeddings['%s (%s)' % (method, BIPARTITE_MODES[mode])] = run_baseline(graph, method, baseline_cfg)
        if cfg.eval_concat_baselines:
            embeddings['%s (service+doctor)' % method] = concatenate_tables(
                embeddings['%s (service)' % method], embeddings['%s (doctor)' % method])
    return embeddings


def evaluate_stage(cfg):
    _require(cfg, 'labels')
    patients = EmbeddingTable.load(cfg.path('patients.emb'), 'patient')
    embeddings = method_embeddings(cfg, _events(cfg), patients)
    report = evaluate_all(embeddings, load_labels(cfg.labels), cfg.eval_config())
    report.to_csv(cfg.path('report.csv'))
    with open(cfg.path('report.txt'), 'w') as out:
        out.write(report.render())


def project_table(table, prefix, groups=None, edges=None, title='', seed=0):
    projection = pca_project(table.ids, table.vectors, seed=seed)
    save_projection_csv(projection, prefix + '.csv')
    save_scatter_svg(projection, prefix + '.svg', groups=groups, edges=edges, title=title)
    return projection


def project_stage(cfg):
    graph = load_graph(cfg.path('graph.tsv'))
    services = EmbeddingTable.load(cfg.path('services.emb'), 'service')
    project_table(services, cfg.path('services_projection'), edges=graph.edges(), title='services', seed=cfg.seed)

    specialties = load_specialties(cfg.specialties) if cfg.specialties else None
    doctors = EmbeddingTable.load(cfg.path('doctors.emb'), 'doctor')
    project_table(doctors, cfg.path('doctors_projection'), groups=specialties, title='doctors', seed=cfg.seed)


@dataclass(frozen=True)
class Stage:
    name: str
    outputs: Tuple[str, ...]
    build: Callable


STAGES = {stage.name: stage for stage in (
    Stage('build-graph', ('graph.tsv',), build_graph_stage),
    Stage('train-services', ('services.emb',), train_services_stage),
    Stage('train-doctors', ('doctors.emb', 'attention.params'), train_doctors_stage),
    Stage('train-patients', ('patients.emb', 'annotation.params', 'hybrid_graph.tsv'), train_patients_stage),
    Stage('evaluate', ('report.csv', 'report.txt'), evaluate_stage),
    Stage('project', ('services_projection.csv', 'services_projection.svg',
                      'doctors_projection.csv', 'doctors_projection.svg'), project_stage),
)}


def run_stage(name, cfg, force=False):
    stage = STAGES[name]
    outputs = [cfg.path(filename) for filename in stage.outputs]
    if not force and all(os.path.exists(path) for path in outputs):
        logger.info('skipping %s: outputs exist', name)
        return False

    logger.info('running %s', name)
    configure_threads(cfg)
    try:
        os.makedirs(cfg.output_dir, exist_ok=True)
        stage.build(cfg)
    except (ValidationError, OSError, ValueError, KeyError, RuntimeError) as e:
        raise StageError(name, e) from e

    stage_completed.send(sender=PipelineConfig, stage=name, artifacts=outputs, config_hash=cfg.hash(),
                         seed=cfg.seed, output_dir=cfg.output_dir)
    return True


def run_pipeline(cfg, force=False):
    return [(name, run_stage(name, cfg, force)) for name in STAGES]


# Paths whose manifest digest no longer matches the file (or whose file is gone)
def verify_manifest(output_dir):
    mismatched = []
    for relative, entry in sorted(read_manifest(output_dir).items()):
        path = os.path.join(output_dir, relative)
        if not os.path.exists(path) or file_digest(path) != entry['sha256']:
            mismatched.append(relative)
    return mismatched
