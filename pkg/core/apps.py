from django.apps import AppConfig


class CoreAppConfig(AppConfig):
    name = 'core'
    verbose_name = 'Geometry, camera and shared errors'
