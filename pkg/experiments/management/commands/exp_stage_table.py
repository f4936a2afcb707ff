from experiments.commands import ExperimentCommand
from experiments.config import Suite


class Command(ExperimentCommand):
    help = 'Stage success counts per segmentation scheme and similarity score.'
    suite = Suite.STAGE_TABLE
