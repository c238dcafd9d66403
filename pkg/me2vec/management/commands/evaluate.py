from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Score patient embeddings and baselines by node classification (report.csv, report.txt).'
    stage = 'evaluate'
