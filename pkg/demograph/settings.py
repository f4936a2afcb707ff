"""
Django settings for the demograph project.

demograph builds demonstration graphs out of segmented, recorded demonstrations and servos a
simulated eye-in-hand robot along the cheapest path through them. There is no web surface: the
project is driven through ``manage.py`` commands, and these settings hold every tunable default.

Values an operator is expected to override are read from the environment (a ``.env`` file is
honoured).
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables from the .env file
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('SECRET_KEY', 'demograph-local-only')

DEBUG = os.getenv('DEMOGRAPH_DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'core',
    'pose',
    'simulator',
    'correspondence',
    'similarity',
    'demobank',
    'planner',
    'servo',
    'experiments',
]

# Nothing is stored in a database; experiment artefacts live on disk.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

REST_FRAMEWORK = {
    'UNICODE_JSON': False,
    'COMPACT_JSON': False,
}


# Logging

LOG_LEVEL = os.getenv('DEMOGRAPH_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        name: {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False}
        for name in (
            'core', 'pose', 'simulator', 'correspondence', 'similarity',
            'demobank', 'planner', 'servo', 'experiments',
        )
    },
}


# Simulated tabletop world. Lengths in meters, angles in radians.

SIMULATOR = {
    'IMAGE_WIDTH': 64,
    'IMAGE_HEIGHT': 48,
    'FX': 40.0,
    'FY': 40.0,
    'CX': 32.0,
    'CY': 24.0,
    'HOME_POSITION': (0.0, 0.0, 0.35),
    'WORKSPACE_MIN': (-0.30, -0.30, 0.15),
    'WORKSPACE_MAX': (0.30, 0.30, 0.45),
    'PLACEMENT_MIN': (-0.13, -0.13),
    'PLACEMENT_MAX': (0.13, 0.13),
    'CLEARANCE': 0.01,
    'MAX_STEP_TRANSLATION': 0.02,
    'MAX_STEP_ROTATION': 0.1,
    'GRASP_RADIUS': 0.015,
    # grasp point expressed in the end-effector (= camera) frame
    'GRASP_OFFSET': (0.0, 0.05, 0.15),
    'LIFT_HEIGHT': 0.40,
    'FIXTURE_POSITION': (0.0, 0.0),
    'SHAPES': ('trapeze', 'oval'),
    'POSITION_TOLERANCE': 0.015,
    'ORIENTATION_TOLERANCE': 0.1,
    # anywhere this close to the pad centre counts as placed
    'PAD_TOLERANCE': 0.04,
    'TEXTURE_SEED': int(os.getenv('DEMOGRAPH_TEXTURE_SEED', '7')),
    'TEXTURE_CELL': 0.01,
    'KEYFRAME_TRANSLATION': 0.04,
    'KEYFRAME_ROTATION': 0.3,
    'MIN_FOREGROUND_PIXELS': 12,
}

CORRESPONDENCE = {
    'BACKEND': 'oracle',
    'NOISE_PX': 0.0,
    'SEED': 0,
    # None is the exact oracle; suites that model a short-range flow estimator set their own cap
    'MAX_FLOW_PX': None,
    'BREAKDOWN_FRACTION': 0.5,
    'PATCH': 2,
    'SEARCH': 4,
    'SSD_CEILING': 0.05,
    'NMS_RADIUS': 3,
    'MAX_KEYPOINTS': 200,
    'DESCRIPTOR_HALF': 3,
    'MIN_MATCH_SCORE': 0.7,
}

SIMILARITY = {
    'KIND': 'fs',
    'K': 0.5,
    'TEMPERATURE': 1.0,
    'INLIER_CAP': 200.0,
    'EMBEDDING_CAP': 1.0,
    'EPSILON': 1e-12,
    'COVERAGE_POWER': 0.0,
    'EMBEDDER': 'histogram',
}

RANSAC = {
    'THRESHOLD_M': 0.005,
    'ITERATIONS': 200,
    'SEED': 0,
}

PLANNER = {
    'MODE': 'multiplicative',
    'STAGE_FILTER': True,
    'TEMPERATURE': None,
    'COST_CAP': 40.0,
    'WORKERS': 1,
}

SERVO = {
    'TRANS_THRESHOLD': 0.01,
    'ROT_THRESHOLD': 0.05,
    'MAX_STEPS_PER_KEYFRAME': 10,
    'GAIN': 1.0,
    'FITTER': 'plain',
}

EXPERIMENTS = {
    'OUTPUT_DIR': os.getenv('DEMOGRAPH_OUTPUT_DIR', str(BASE_DIR / 'results')),
    'BASE_SEED': 1000,
    'DEMO_SEED_OFFSET': 100000,
    'EPISODES': 50,
}

SLOW_TESTS = os.getenv('DEMOGRAPH_SLOW_TESTS', '') == '1'
