from django.apps import AppConfig


class PlannerAppConfig(AppConfig):
    name = 'planner'
    verbose_name = 'Demonstration graph planner'
