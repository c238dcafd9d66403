from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Train doctor embeddings (doctors.emb, attention.params) by specialty prediction.'
    stage = 'train-doctors'
