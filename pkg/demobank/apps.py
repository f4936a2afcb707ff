from django.apps import AppConfig


class DemobankAppConfig(AppConfig):
    name = 'demobank'
    verbose_name = 'Demonstration bank'
