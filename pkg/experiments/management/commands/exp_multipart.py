from experiments.commands import ExperimentCommand
from experiments.config import Suite


class Command(ExperimentCommand):
    help = 'Multi-part sweep over segmentation schemes and demonstration counts.'
    suite = Suite.MULTIPART
