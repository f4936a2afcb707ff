from experiments.commands import ExperimentCommand
from experiments.config import Suite


class Command(ExperimentCommand):
    help = 'Goal-conditioned search against single-shape and mixed banks.'
    suite = Suite.GOAL
