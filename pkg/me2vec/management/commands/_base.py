from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from me2vec.pipeline import StageError, load_config, run_stage


class PipelineCommand(BaseCommand):
    """Shared flags and error handling for the pipeline subcommands."""

    stage = None

    def add_arguments(self, parser):
        parser.add_argument('--config', help='pipeline config file (key = value lines)')
        parser.add_argument('--seed', type=int, help='global seed, overrides HGE_SEED and the config file')
        parser.add_argument('--force', action='store_true', help='rerun stages whose outputs already exist')
        parser.add_argument('--threads', help='"deterministic" or a worker count, overrides HGE_THREADS')

    def load_config(self, options):
        try:
            return load_config(options['config'], {'seed': options['seed'], 'threads': options['threads']})
        except (ValidationError, OSError) as e:
            message = '; '.join(e.messages) if isinstance(e, ValidationError) else str(e)
            raise CommandError(message)

    def run_stage(self, name, cfg, force):
        try:
            ran = run_stage(name, cfg, force)
        except StageError as e:
            raise CommandError(str(e))
        if ran:
            self.stdout.write(self.style.SUCCESS('%s: done' % name))
        else:
            self.stdout.write('%s: skipped, outputs exist (use --force to rerun)' % name)
        return ran

    def handle(self, *args, **options):
        cfg = self.load_config(options)
        self.run_stage(self.stage, cfg, options['force'])
