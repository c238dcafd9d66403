from django.apps import AppConfig


class Me2vecConfig(AppConfig):
    name = 'me2vec'
    verbose_name = 'ME2Vec hierarchical embeddings'

    def ready(self):
        import me2vec.signals  # noqa: F401
