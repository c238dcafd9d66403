from django.core.exceptions import ValidationError
from django.core.management.base import CommandError

from me2vec.ehr import load_specialties
from me2vec.models import ENTITY_TYPES, EmbeddingTable
from me2vec.pipeline import project_table
from me2vec.service_graph import load_graph

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = ('Project embeddings to 2-D with PCA and write <prefix>.csv (id,x,y) and <prefix>.svg. '
            'Without --embedding, projects the pipeline\'s service and doctor embeddings.')
    stage = 'project'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--embedding', help='embedding file to project')
        parser.add_argument('--entity-type', default='service', choices=ENTITY_TYPES)
        parser.add_argument('--out', help='output prefix (default: the embedding path without extension)')
        parser.add_argument('--specialties', help='doctor specialty CSV; colours points by specialty')
        parser.add_argument('--graph', help='service graph edge list; draws co-occurrence edges')

    def handle(self, *args, **options):
        if not options['embedding']:
            return super().handle(*args, **options)

        seed = options['seed'] if options['seed'] is not None else self.load_config(options).seed
        prefix = options['out'] or options['embedding'].rsplit('.', 1)[0]
        try:
            table = EmbeddingTable.load(options['embedding'], options['entity_type'])
            groups = load_specialties(options['specialties']) if options['specialties'] else None
            edges = load_graph(options['graph']).edges() if options['graph'] else None
            project_table(table, prefix, groups=groups, edges=edges, title=options['entity_type'], seed=seed)
        except (ValidationError, OSError, ValueError) as e:
            message = '; '.join(e.messages) if isinstance(e, ValidationError) else str(e)
            raise CommandError('stage project failed: %s' % message)

        self.stdout.write(self.style.SUCCESS('wrote %s.csv and %s.svg' % (prefix, prefix)))
