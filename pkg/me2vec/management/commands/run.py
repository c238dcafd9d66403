from me2vec.pipeline import STAGES, verify_manifest

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Run every stage in order, skipping stages whose outputs exist.'

    def handle(self, *args, **options):
        cfg = self.load_config(options)
        for name in STAGES:
            self.run_stage(name, cfg, options['force'])

        mismatched = verify_manifest(cfg.output_dir)
        if mismatched:
            self.stderr.write('manifest out of date for: %s' % ', '.join(mismatched))
        else:
            self.stdout.write(self.style.SUCCESS('all artifacts match %s/manifest.json' % cfg.output_dir))
