"""
Django settings for the hge project.

The project has no web surface: Django supplies the settings layer, management
commands, forms validation, template rendering and signals for the me2vec app.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

import os

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Only used for signing, which nothing in this project does
SECRET_KEY = os.environ.get('HGE_SECRET_KEY', 'hge-local-only')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'me2vec.apps.Me2vecConfig',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            # reports are plain text and SVG, not HTML
            'autoescape': False,
        },
    },
]


# No database: every artifact is a plain-text file in the output directory

DATABASES = {}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'me2vec': {
            'handlers': ['console'],
            'level': os.environ.get('HGE_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Pipeline defaults. A config file, HGE_SEED / HGE_THREADS and command-line
# flags override these in that order.

ME2VEC_DEFAULTS = {
    # co-occurrence window length in days
    'window_days': 8,

    # embedding sizes; doctor_dim must equal heads * head_dim
    'service_dim': 128,
    'heads': 4,
    'head_dim': 32,
    'doctor_dim': 128,
    'patient_dim': 128,

    'negatives': 10,

    # biased random walks
    'walks_per_node': 10,
    'walk_length': 80,
    'return_param': 1.0,
    'inout_param': 1.0,

    # skip-gram
    'sgns_window': 10,
    'sgns_epochs': 5,
    'sgns_learning_rate': 0.025,
    'sgns_min_learning_rate': 0.0001,

    # doctor attention
    'doctor_epochs': 200,
    'doctor_learning_rate': 0.01,
    'doctor_holdout': 0.2,
    'leaky_slope': 0.2,
    'activation': 'elu',

    # patient second-order training
    'patient_epochs': 5,
    'patient_learning_rate': 0.025,
    'patient_batch_size': 256,

    # node classification
    'eval_train_ratios': [0.2, 0.4, 0.6, 0.8],
    'eval_repeats': 10,
    'eval_l2_lambda': 1.0,
    'eval_concat_baselines': False,

    'seed': 0,
    'threads': 'deterministic',
}
