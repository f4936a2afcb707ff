from django.apps import AppConfig


class PoseAppConfig(AppConfig):
    name = 'pose'
    verbose_name = 'Rigid pose estimation'
