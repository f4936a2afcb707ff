from django.apps import AppConfig


class CorrespondenceAppConfig(AppConfig):
    name = 'correspondence'
    verbose_name = 'Flow and keypoint correspondence'
