from django.apps import AppConfig


class SimilarityAppConfig(AppConfig):
    name = 'similarity'
    verbose_name = 'State similarity scores'
