import os

from django.core.management.base import BaseCommand, CommandError

from me2vec.ehr import generate_synthetic, save_events, save_labels, save_specialties
from me2vec.forms import SyntheticSpecForm, form_error_text
from me2vec.models import LABEL_RULES, SyntheticSpec

CONFIG_TEMPLATE = """\
# written by gen-synthetic; every other key falls back to the settings defaults
events = events.csv
specialties = specialties.csv
labels = labels.csv
output_dir = output
seed = {seed}
"""


class Command(BaseCommand):
    help = ('Generate a synthetic dataset with planted structure: events.csv, specialties.csv, labels.csv '
            'and a matching hge.cfg in the output directory.')

    def add_arguments(self, parser):
        defaults = SyntheticSpec()
        parser.add_argument('--out', default='.', help='output directory')
        parser.add_argument('--n-patients', type=int, default=defaults.n_patients)
        parser.add_argument('--n-doctors', type=int, default=defaults.n_doctors)
        parser.add_argument('--n-services', type=int, default=defaults.n_services)
        parser.add_argument('--n-specialties', type=int, default=defaults.n_specialties)
        parser.add_argument('--journey-days', type=int, default=defaults.journey_days)
        parser.add_argument('--noise-rate', type=float, default=defaults.noise_rate)
        parser.add_argument('--label-rule', default=defaults.label_rule, choices=LABEL_RULES)
        parser.add_argument('--events-per-patient', type=int, default=defaults.events_per_patient)
        parser.add_argument('--planted-repeats', type=int, default=defaults.planted_repeats)
        parser.add_argument('--seed', type=int, help='generator seed (default: HGE_SEED or 0)')

    def handle(self, *args, **options):
        seed = options['seed']
        if seed is None:
            seed = os.environ.get('HGE_SEED') or 0

        fields = SyntheticSpecForm.base_fields
        data = {name: options[name] for name in fields if name != 'seed'}
        data['seed'] = seed
        form = SyntheticSpecForm(data=data)
        if not form.is_valid():
            raise CommandError('invalid synthetic spec: %s' % form_error_text(form))
        spec = form.to_spec()

        events, specialties, labels = generate_synthetic(spec)
        out = options['out']
        os.makedirs(out, exist_ok=True)
        save_events(events, os.path.join(out, 'events.csv'))
        save_specialties(specialties, os.path.join(out, 'specialties.csv'))
        save_labels(labels, os.path.join(out, 'labels.csv'))
        with open(os.path.join(out, 'hge.cfg'), 'w') as config:
            config.write(CONFIG_TEMPLATE.format(seed=spec.seed))

        self.stdout.write(self.style.SUCCESS(
            'wrote %d events, %d doctors and %d labels to %s' % (len(events), len(specialties), len(labels), out)))
