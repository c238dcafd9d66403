from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Build the service co-occurrence graph (graph.tsv) from the events file.'
    stage = 'build-graph'
