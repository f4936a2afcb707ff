from experiments.commands import ExperimentCommand
from experiments.config import Suite


class Command(ExperimentCommand):
    help = 'Pick and place helped by shape-sorting demonstrations.'
    suite = Suite.CROSSTASK
