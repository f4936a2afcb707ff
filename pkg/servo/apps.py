from django.apps import AppConfig


class ServoAppConfig(AppConfig):
    name = 'servo'
    verbose_name = 'Visual servoing'
