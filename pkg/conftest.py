import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'demograph.settings')
django.setup()
