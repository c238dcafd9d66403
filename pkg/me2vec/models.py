import datetime
import re
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Union

import numpy as np
from django.core.exceptions import ValidationError

ENTITY_TYPES = ('service', 'doctor', 'patient', 'hybrid')
LABEL_RULES = ('service_only', 'doctor_service_pair')

# ids end up in space- and tab-separated files
_ID_PATTERN = re.compile(r'^\S+$')

Day = Union[datetime.date, int]


def is_entity_id(value):
    return isinstance(value, str) and bool(_ID_PATTERN.match(value))


# Day number used for window arithmetic: ordinal for calendar dates, the
# integer itself for day indices
def day_number(date):
    if isinstance(date, bool):
        raise TypeError('day must be a date or an integer')
    if isinstance(date, datetime.date):
        return date.toordinal()
    return int(date)


def format_day(date):
    if isinstance(date, datetime.date):
        return date.isoformat()
    return str(date)


# One (patient, doctor, service, date) record
@dataclass(frozen=True)
class JourneyEvent:
    patient_id: str
    doctor_id: str
    service_id: str
    date: Day

    def __post_init__(self):
        self.clean()

    def clean(self):
        errors = {}
        for name in ('patient_id', 'doctor_id', 'service_id'):
            if not is_entity_id(getattr(self, name)):
                errors[name] = 'Enter a non-empty id without whitespace.'

        if isinstance(self.date, bool) or not isinstance(self.date, (datetime.date, int)):
            errors['date'] = 'Enter a valid date or day index.'

        if errors:
            raise ValidationError(errors)

    @property
    def day(self):
        return day_number(self.date)


@dataclass(frozen=True)
class DoctorSpecialty:
    doctor_id: str
    specialty: str

    def __post_init__(self):
        errors = {}
        if not is_entity_id(self.doctor_id):
            errors['doctor_id'] = 'Enter a non-empty id without whitespace.'
        if not is_entity_id(self.specialty):
            errors['specialty'] = 'Enter a specialty label without whitespace.'
        if errors:
            raise ValidationError(errors)


@dataclass(frozen=True)
class PatientLabel:
    patient_id: str
    label: int

    def __post_init__(self):
        errors = {}
        if not is_entity_id(self.patient_id):
            errors['patient_id'] = 'Enter a non-empty id without whitespace.'
        if self.label not in (0, 1) or isinstance(self.label, bool):
            errors['label'] = 'Label must be 0 or 1.'
        if errors:
            raise ValidationError(errors)


# Parameters of the synthetic journey generator
@dataclass(frozen=True)
class SyntheticSpec:
    n_patients: int = 200
    n_doctors: int = 40
    n_services: int = 51
    n_specialties: int = 5
    journey_days: int = 365
    noise_rate: float = 0.05
    label_rule: str = 'service_only'
    seed: int = 0
    events_per_patient: int = 12
    planted_repeats: int = 3

    def clean(self):
        errors = {}
        for name in ('n_patients', 'n_doctors', 'n_services', 'n_specialties',
                     'journey_days', 'events_per_patient', 'planted_repeats'):
            if getattr(self, name) < 1:
                errors[name] = 'Must be a positive count.'

        if not 0.0 <= self.noise_rate <= 1.0:
            errors['noise_rate'] = 'Must lie in [0, 1].'

        if self.label_rule not in LABEL_RULES:
            errors['label_rule'] = 'Must be one of %s.' % ', '.join(LABEL_RULES)

        if self.n_specialties > self.n_doctors:
            errors['n_specialties'] = 'Cannot exceed n_doctors.'

        # the last service is reserved for planting labels
        elif self.n_services - 1 < self.n_specialties:
            errors['n_services'] = 'Need at least one vocabulary service per specialty plus the designated service.'

        if self.n_patients < 2:
            errors['n_patients'] = 'Need at least two patients for both label classes.'

        if self.label_rule == 'doctor_service_pair' and self.n_specialties < 2:
            errors['label_rule'] = 'doctor_service_pair needs at least two specialties.'
        elif self.label_rule == 'doctor_service_pair' and self.n_doctors <= self.n_specialties:
            errors['n_doctors'] = 'doctor_service_pair needs at least two doctors in specialty 0.'

        if errors:
            raise ValidationError(errors)


# id-indexed matrix of vectors for one entity type
@dataclass(eq=False)
class EmbeddingTable:
    entity_type: str
    ids: List[str]
    vectors: np.ndarray
    _index: Dict[str, int] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.ids = list(self.ids)
        self.vectors = np.array(self.vectors, dtype=np.float64)
        if self.vectors.ndim == 1 and len(self.ids) == 0:
            self.vectors = self.vectors.reshape(0, 0)

        errors = {}
        if self.entity_type not in ENTITY_TYPES:
            errors['entity_type'] = 'Must be one of %s.' % ', '.join(ENTITY_TYPES)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            errors['vectors'] = 'Need one row per id.'
        elif not np.all(np.isfinite(self.vectors)):
            errors['vectors'] = 'All entries must be finite.'
        if len(set(self.ids)) != len(self.ids):
            errors['ids'] = 'Ids must be unique.'
        elif not all(is_entity_id(i) for i in self.ids):
            errors['ids'] = 'Ids must be non-empty and whitespace-free.'
        if errors:
            raise ValidationError(errors)

        self._index = {entity_id: row for row, entity_id in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    def __contains__(self, entity_id):
        return entity_id in self._index

    @property
    def dim(self):
        return self.vectors.shape[1]

    def index(self, entity_id):
        return self._index[entity_id]

    def vector(self, entity_id):
        return self.vectors[self._index[entity_id]]

    def rows(self, entity_ids: Sequence[str]):
        return self.vectors[[self._index[i] for i in entity_ids]]

    def subset(self, entity_ids: Sequence[str]):
        return EmbeddingTable(self.entity_type, list(entity_ids), self.rows(entity_ids))

    def cosine(self, first, second):
        a, b = self.vector(first), self.vector(second)
        norm = np.linalg.norm(a) * np.linalg.norm(b)
        return float(a @ b / norm) if norm > 0 else 0.0

    def save(self, path):
        with open(path, 'w') as out:
            out.write('%d %d\n' % (len(self.ids), self.dim if self.ids else 0))
            for entity_id, row in zip(self.ids, self.vectors):
                out.write(entity_id + ' ' + ' '.join(repr(float(x)) for x in row) + '\n')

    @classmethod
    def load(cls, path, entity_type):
        with open(path) as lines:
            header = lines.readline().split()
            if len(header) != 2:
                raise ValidationError('%s: header must be "<count> <dim>"' % path)
            count, dim = int(header[0]), int(header[1])

            ids, rows = [], []
            for line_no, line in enumerate(lines, start=2):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != dim + 1:
                    raise ValidationError('%s: line %d has %d values, expected %d' % (path, line_no, len(parts) - 1, dim))
                ids.append(parts[0])
                rows.append([float(x) for x in parts[1:]])

        if len(ids) != count:
            raise ValidationError('%s: header announces %d rows, found %d' % (path, count, len(ids)))

        vectors = np.array(rows, dtype=np.float64).reshape(count, dim)
        return cls(entity_type, ids, vectors)


## Parameter files: "name d1,d2,... v1 v2 ..." per array, "#meta key value..." per setting

def save_params(path, arrays, meta=None):
    with open(path, 'w') as out:
        for key, values in (meta or {}).items():
            if isinstance(values, (list, tuple)):
                values = ' '.join(str(v) for v in values)
            out.write('#meta %s %s\n' % (key, values))
        for name, array in arrays.items():
            array = np.asarray(array, dtype=np.float64)
            shape = ','.join(str(n) for n in array.shape) or '1'
            out.write('%s %s %s\n' % (name, shape, ' '.join(repr(float(x)) for x in array.ravel())))


def load_params(path):
    arrays, meta = {}, {}
    with open(path) as lines:
        for line_no, line in enumerate(lines, start=1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == '#meta':
                meta[parts[1]] = parts[2:]
                continue

            name, shape = parts[0], tuple(int(n) for n in parts[1].split(','))
            values = np.array([float(x) for x in parts[2:]], dtype=np.float64)
            if values.size != int(np.prod(shape)):
                raise ValidationError('%s: line %d: %s needs %d values, found %d'
                                      % (path, line_no, name, int(np.prod(shape)), values.size))
            arrays[name] = values.reshape(shape)
    return arrays, meta
