from experiments.commands import ExperimentCommand
from experiments.config import Suite


class Command(ExperimentCommand):
    help = 'Top-1 retrieval errors of every similarity score against a random pick.'
    suite = Suite.SIMILARITY
