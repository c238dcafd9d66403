import os
import tempfile
from contextlib import contextmanager

import numpy as np
from django.core.exceptions import ValidationError

from me2vec.ehr import generate_synthetic, sort_journeys
from me2vec.models import EmbeddingTable, JourneyEvent, SyntheticSpec


# Allow easy testing for validation errors
class ValidationErrorTestMixin(object):
    @contextmanager
    def assertValidationErrors(self, fields):
        try:
            yield
            raise AssertionError("ValidationError not raised")

        except ValidationError as e:
            self.assertEqual(set(fields), set(e.message_dict.keys()))

    @contextmanager
    def assertValidationMessage(self, fragment):
        try:
            yield
            raise AssertionError("ValidationError not raised")

        except ValidationError as e:
            self.assertIn(fragment, ' '.join(e.messages))


class TempDirMixin(object):
    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()

    def tmp_path(self, *parts):
        return os.path.join(self.tmp, *parts)

    def write_file(self, name, text):
        path = self.tmp_path(name)
        with open(path, 'w') as out:
            out.write(text)
        return path


## Helper functions
def make_event(patient, doctor, service, day):
    return JourneyEvent(patient, doctor, service, day)

def make_journeys(*events):
    return sort_journeys([make_event(*e) for e in events])

def random_events(rng, patients=20, doctors=6, services=15, days=60, count=None):
    count = count or int(rng.integers(1, 6 * patients))
    return [
        make_event('P%d' % rng.integers(patients), 'D%d' % rng.integers(doctors),
                   'S%d' % rng.integers(services), int(rng.integers(days)))
        for _ in range(count)
    ]

def random_table(rng, entity_type, ids, dim):
    return EmbeddingTable(entity_type, list(ids), rng.standard_normal((len(ids), dim)))

def synthetic_dataset(**overrides):
    return generate_synthetic(SyntheticSpec(**overrides))

def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

def mean_cosine(table, pairs):
    return float(np.mean([table.cosine(a, b) for a, b in pairs]))

def cosine_matrix(vectors):
    unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    return unit @ unit.T

## Pipeline settings small enough for a desk-scale run
SMALL_PIPELINE = {
    'service_dim': 16,
    'heads': 2,
    'head_dim': 8,
    'doctor_dim': 16,
    'patient_dim': 16,
    'walks_per_node': 5,
    'walk_length': 20,
    'sgns_window': 5,
    'sgns_epochs': 2,
    'doctor_epochs': 50,
    'patient_epochs': 2,
    'eval_train_ratios': '0.5,0.8',
    'eval_repeats': 2,
}

def write_config(path, **values):
    with open(path, 'w') as out:
        for key, value in values.items():
            out.write('%s = %s\n' % (key, value))
    return path
