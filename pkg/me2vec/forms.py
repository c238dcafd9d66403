import datetime
import re

from django import forms
from django.core.exceptions import ValidationError
from django.core.validators import RegexValidator

from .models import LABEL_RULES, DoctorSpecialty, JourneyEvent, PatientLabel, SyntheticSpec

_DAY_INDEX = re.compile(r'^-?\d+$')


def positive(value):
    if not value > 0:
        raise ValidationError('Ensure this value is greater than 0.')


def open_fraction(value):
    if not 0 < value < 1:
        raise ValidationError('Ensure this value lies strictly between 0 and 1.')


class EntityIdField(forms.CharField):
    default_validators = [RegexValidator(r'^\S+$', 'Enter an id without whitespace.')]


# Accepts an ISO-8601 date (YYYY-MM-DD) or an integer day index
class DayField(forms.Field):

    def to_python(self, value):
        if value in self.empty_values:
            return None
        if isinstance(value, bool):
            raise ValidationError('Enter a valid date.', code='invalid')
        if isinstance(value, (int, datetime.date)):
            return value

        value = str(value).strip()
        if _DAY_INDEX.match(value):
            return int(value)
        try:
            return datetime.date.fromisoformat(value)
        except ValueError:
            raise ValidationError('Enter a valid date.', code='invalid')


class RatioListField(forms.Field):

    def to_python(self, value):
        if value in self.empty_values:
            return None
        if isinstance(value, str):
            value = [part for part in value.split(',') if part.strip()]
        try:
            ratios = [float(part) for part in value]
        except (TypeError, ValueError):
            raise ValidationError('Enter a comma-separated list of fractions.', code='invalid')
        for ratio in ratios:
            open_fraction(ratio)
        return ratios


# Rows of the events file
class JourneyEventForm(forms.Form):
    patient_id = EntityIdField()
    doctor_id = EntityIdField()
    service_id = EntityIdField()
    date = DayField()

    def to_event(self):
        return JourneyEvent(**self.cleaned_data)


class DoctorSpecialtyForm(forms.Form):
    doctor_id = EntityIdField()
    specialty = EntityIdField()

    def to_record(self):
        return DoctorSpecialty(**self.cleaned_data)


class PatientLabelForm(forms.Form):
    patient_id = EntityIdField()
    label = forms.TypedChoiceField(choices=[('0', '0'), ('1', '1')], coerce=int)

    def to_record(self):
        return PatientLabel(**self.cleaned_data)


class SyntheticSpecForm(forms.Form):
    n_patients = forms.IntegerField(min_value=2)
    n_doctors = forms.IntegerField(min_value=1)
    n_services = forms.IntegerField(min_value=2)
    n_specialties = forms.IntegerField(min_value=1)
    journey_days = forms.IntegerField(min_value=1)
    noise_rate = forms.FloatField(min_value=0.0, max_value=1.0)
    label_rule = forms.ChoiceField(choices=[(rule, rule) for rule in LABEL_RULES])
    seed = forms.IntegerField()
    events_per_patient = forms.IntegerField(min_value=1)
    planted_repeats = forms.IntegerField(min_value=1)

    def clean(self):
        cleaned_data = super().clean()
        if self.errors:
            return cleaned_data

        try:
            SyntheticSpec(**cleaned_data).clean()
        except ValidationError as e:
            for field, messages in e.message_dict.items():
                self.add_error(field, messages)
        return cleaned_data

    def to_spec(self):
        return SyntheticSpec(**self.cleaned_data)


# Schema of the key = value pipeline config file
class PipelineConfigForm(forms.Form):
    events = forms.CharField(required=False)
    events_format = forms.ChoiceField(choices=[('csv', 'csv'), ('jsonl', 'jsonl')], required=False)
    specialties = forms.CharField(required=False)
    labels = forms.CharField(required=False)
    output_dir = forms.CharField(required=False)

    window_days = forms.IntegerField(min_value=1)

    service_dim = forms.IntegerField(min_value=1)
    heads = forms.IntegerField(min_value=1)
    head_dim = forms.IntegerField(min_value=1)
    doctor_dim = forms.IntegerField(min_value=1)
    patient_dim = forms.IntegerField(min_value=1)
    negatives = forms.IntegerField(min_value=1)

    walks_per_node = forms.IntegerField(min_value=1)
    walk_length = forms.IntegerField(min_value=2)
    return_param = forms.FloatField(validators=[positive])
    inout_param = forms.FloatField(validators=[positive])

    sgns_window = forms.IntegerField(min_value=1)
    sgns_epochs = forms.IntegerField(min_value=1)
    sgns_learning_rate = forms.FloatField(validators=[positive])
    sgns_min_learning_rate = forms.FloatField(validators=[positive])

    doctor_epochs = forms.IntegerField(min_value=1)
    doctor_learning_rate = forms.FloatField(validators=[positive])
    doctor_holdout = forms.FloatField(validators=[open_fraction])
    leaky_slope = forms.FloatField(min_value=0.0)
    activation = forms.ChoiceField(choices=[('elu', 'elu'), ('relu', 'relu'), ('identity', 'identity')])

    patient_epochs = forms.IntegerField(min_value=1)
    patient_learning_rate = forms.FloatField(validators=[positive])
    patient_batch_size = forms.IntegerField(min_value=1)

    eval_train_ratios = RatioListField()
    eval_repeats = forms.IntegerField(min_value=1)
    eval_l2_lambda = forms.FloatField(min_value=0.0)
    eval_concat_baselines = forms.BooleanField(required=False)

    seed = forms.IntegerField(min_value=-2 ** 63, max_value=2 ** 64 - 1)
    threads = forms.CharField()

    def clean_threads(self):
        threads = self.cleaned_data['threads'].strip()
        if threads == 'deterministic':
            return threads
        if threads.isdigit() and int(threads) > 0:
            return int(threads)
        raise ValidationError('Enter "deterministic" or a positive worker count.')

    def clean(self):
        cleaned_data = super().clean()
        heads, head_dim, doctor_dim = (cleaned_data.get(k) for k in ('heads', 'head_dim', 'doctor_dim'))
        if None not in (heads, head_dim, doctor_dim) and heads * head_dim != doctor_dim:
            self.add_error('doctor_dim', 'doctor_dim must equal heads * head_dim (%d * %d).' % (heads, head_dim))
        return cleaned_data


def form_error_text(form):
    return '; '.join('%s: %s' % (field, ' '.join(messages)) for field, messages in form.errors.items())
