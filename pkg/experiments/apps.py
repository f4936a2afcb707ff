from django.apps import AppConfig


class ExperimentsAppConfig(AppConfig):
    name = 'experiments'
    verbose_name = 'Experiment suites and commands'
