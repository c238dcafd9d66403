import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'hge.settings')
django.setup()
