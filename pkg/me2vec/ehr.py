import datetime
import json
import logging
from collections import defaultdict

import pandas as pd
from django.core.exceptions import ValidationError

from .forms import DoctorSpecialtyForm, JourneyEventForm, PatientLabelForm, form_error_text
from .models import JourneyEvent, format_day
from .sampling import seeded_rng

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ['patient_id', 'doctor_id', 'service_id', 'date']
SPECIALTY_COLUMNS = ['doctor_id', 'specialty']
LABEL_COLUMNS = ['patient_id', 'label']

# calendar origin for synthetic day offsets
SYNTHETIC_EPOCH = datetime.date(2020, 1, 1)


## Reading

# Yield (line number, row dict) for every data row of a headed CSV file
def _csv_rows(path, columns):
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise ValidationError('%s: file is empty' % path)
    except pd.errors.ParserError as e:
        raise ValidationError('%s: %s' % (path, e))

    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ValidationError('%s: missing columns %s' % (path, ', '.join(missing)))
    # blank lines stay in the frame so row positions match file lines; line 1 is the header
    frame = frame[columns].fillna('')
    blank = frame.eq('').all(axis=1)
    if blank.all():
        raise ValidationError('%s: file has a header but no rows' % path)

    for line_no, row in enumerate(frame.to_dict('records'), start=2):
        if not blank.iloc[line_no - 2]:
            yield line_no, row


def _jsonl_rows(path):
    found = False
    with open(path) as lines:
        for line_no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError('%s: row %d: %s' % (path, line_no, e.msg))
            if not isinstance(row, dict):
                raise ValidationError('%s: row %d: expected a JSON object' % (path, line_no))
            found = True
            yield line_no, row
    if not found:
        raise ValidationError('%s: file is empty' % path)


def _validated(rows, form_class, path):
    records = []
    for line_no, row in rows:
        form = form_class(data=row)
        if not form.is_valid():
            raise ValidationError('%s: row %d: %s' % (path, line_no, form_error_text(form)))
        records.append(form)
    return records


def load_events(path, format='csv'):
    if format == 'csv':
        rows = _csv_rows(path, EVENT_COLUMNS)
    elif format == 'jsonl':
        rows = _jsonl_rows(path)
    else:
        raise ValidationError('unknown events format %r' % format)

    events = [form.to_event() for form in _validated(rows, JourneyEventForm, path)]
    logger.info('loaded %d events from %s', len(events), path)
    return events


def load_specialties(path):
    specialties = {}
    for form in _validated(_csv_rows(path, SPECIALTY_COLUMNS), DoctorSpecialtyForm, path):
        record = form.to_record()
        if specialties.setdefault(record.doctor_id, record.specialty) != record.specialty:
            raise ValidationError('%s: doctor %s has more than one specialty' % (path, record.doctor_id))
    return specialties


def load_labels(path):
    labels = {}
    for form in _validated(_csv_rows(path, LABEL_COLUMNS), PatientLabelForm, path):
        record = form.to_record()
        if labels.setdefault(record.patient_id, record.label) != record.label:
            raise ValidationError('%s: patient %s has more than one label' % (path, record.patient_id))
    return labels


## Writing

def save_events(events, path, format='csv'):
    records = [
        {'patient_id': e.patient_id, 'doctor_id': e.doctor_id, 'service_id': e.service_id, 'date': e.date}
        for e in events
    ]
    if format == 'csv':
        frame = pd.DataFrame(records, columns=EVENT_COLUMNS)
        frame['date'] = [format_day(e.date) for e in events]
        frame.to_csv(path, index=False)
    elif format == 'jsonl':
        with open(path, 'w') as out:
            for record in records:
                if isinstance(record['date'], datetime.date):
                    record['date'] = record['date'].isoformat()
                out.write(json.dumps(record) + '\n')
    else:
        raise ValidationError('unknown events format %r' % format)


def save_specialties(specialties, path):
    frame = pd.DataFrame(sorted(specialties.items()), columns=SPECIALTY_COLUMNS)
    frame.to_csv(path, index=False)


def save_labels(labels, path):
    frame = pd.DataFrame(sorted(labels.items()), columns=LABEL_COLUMNS)
    frame.to_csv(path, index=False)


## Journeys

def _event_order(event):
    return (event.day, event.service_id, event.doctor_id)


# Per-patient chronological journeys, ties broken by (service_id, doctor_id)
def sort_journeys(events):
    journeys = defaultdict(list)
    for event in events:
        journeys[event.patient_id].append(event)
    return {patient: sorted(journeys[patient], key=_event_order) for patient in sorted(journeys)}


def doctor_service_counts(events):
    counts = defaultdict(lambda: defaultdict(int))
    for event in events:
        counts[event.doctor_id][event.service_id] += 1
    return {doctor: dict(sorted(services.items())) for doctor, services in sorted(counts.items())}


## Synthetic journeys

def _ids(prefix, count):
    width = len(str(max(count - 1, 0)))
    return ['%s%0*d' % (prefix, width, i) for i in range(count)]


def generate_synthetic(spec):
    """
    Generate (events, specialties, labels) with planted structure.

    Doctors and the first n_services - 1 services are split round-robin into
    n_specialties groups; every group owns a disjoint service vocabulary. The
    last service is the designated one: it belongs to specialty 0's vocabulary
    and only ever appears through planted events.

    service_only: the label is the presence of the designated service.

    doctor_service_pair: specialty 0's doctors are split into a designated
    subgroup and the rest. Every patient gets the designated service and a
    designated-subgroup doctor; cases get them together, controls get each
    paired with the other half of specialty 0. Service presence and doctor
    presence alone carry no signal about the label.
    """
    spec.clean()
    rng = seeded_rng(spec.seed)
    groups = spec.n_specialties

    doctors = _ids('D', spec.n_doctors)
    services = _ids('S', spec.n_services)
    patients = _ids('P', spec.n_patients)
    designated = services[-1]

    specialties = {d: 'specialty%d' % (i % groups) for i, d in enumerate(doctors)}
    group_doctors = [[d for i, d in enumerate(doctors) if i % groups == g] for g in range(groups)]
    vocabulary = [[s for j, s in enumerate(services[:-1]) if j % groups == g] for g in range(groups)]
    split = max(1, len(group_doctors[0]) // 2)
    designated_doctors, other_doctors = group_doctors[0][:split], group_doctors[0][split:]

    def pick(items):
        return items[int(rng.integers(len(items)))]

    def day():
        return SYNTHETIC_EPOCH + datetime.timedelta(days=int(rng.integers(spec.journey_days)))

    # exactly floor(n / 2) cases
    order = rng.permutation(spec.n_patients)
    cases = set(int(k) for k in order[:spec.n_patients // 2])

    events = []
    labels = {}
    for k, patient in enumerate(patients):
        dominant = int(rng.integers(groups))

        for _ in range(spec.events_per_patient):
            if rng.random() < spec.noise_rate:
                doctor, service = pick(doctors), pick(services[:-1])
            else:
                doctor, service = pick(group_doctors[dominant]), pick(vocabulary[dominant])
            events.append(JourneyEvent(patient, doctor, service, day()))

        if spec.label_rule == 'service_only':
            if k in cases:
                planted = [(pick(group_doctors[0]), designated)]
            else:
                planted = [(pick(group_doctors[dominant]), pick(vocabulary[dominant]))]
        elif k in cases:
            planted = [(pick(designated_doctors), designated), (pick(other_doctors), pick(vocabulary[0]))]
        else:
            planted = [(pick(other_doctors), designated), (pick(designated_doctors), pick(vocabulary[0]))]

        for doctor, service in planted:
            for _ in range(spec.planted_repeats):
                events.append(JourneyEvent(patient, doctor, service, day()))
        labels[patient] = int(k in cases)

    logger.info('generated %d events for %d patients (%s)', len(events), len(patients), spec.label_rule)
    return events, specialties, labels
