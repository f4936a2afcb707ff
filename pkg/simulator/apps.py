from django.apps import AppConfig


class SimulatorAppConfig(AppConfig):
    name = 'simulator'
    verbose_name = 'Tabletop simulator'
