from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Train patient embeddings (patients.emb, annotation.params) on the hybrid bipartite graph.'
    stage = 'train-patients'
