from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Train service embeddings (services.emb) with biased walks and skip-gram.'
    stage = 'train-services'
