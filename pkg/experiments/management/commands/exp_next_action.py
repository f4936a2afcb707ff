from experiments.commands import ExperimentCommand
from experiments.config import Suite


class Command(ExperimentCommand):
    help = 'Next-action errors of aligning to a retrieved demonstration against replaying it.'
    suite = Suite.NEXT_ACTION
