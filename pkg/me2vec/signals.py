import hashlib
import json
import logging
import os

from django.dispatch import Signal, receiver

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'

# Sent once a stage has written its artifacts.
# kwargs: stage, artifacts, config_hash, seed, output_dir
stage_completed = Signal()


def file_digest(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as artifact:
        for chunk in iter(lambda: artifact.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def read_manifest(output_dir):
    path = os.path.join(output_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        return {}
    with open(path) as manifest:
        return json.load(manifest)


def write_manifest(output_dir, manifest):
    with open(os.path.join(output_dir, MANIFEST_NAME), 'w') as out:
        json.dump(manifest, out, indent=2, sort_keys=True)
        out.write('\n')


# Record every artifact of a finished stage; entries carry no timestamps
@receiver(stage_completed)
def record_artifacts(sender, stage, artifacts, config_hash, seed, output_dir, **kwargs):
    manifest = read_manifest(output_dir)
    for path in artifacts:
        manifest[os.path.relpath(path, output_dir)] = {
            'stage': stage,
            'sha256': file_digest(path),
            'config_hash': config_hash,
            'seed': seed,
        }
    write_manifest(output_dir, manifest)
    logger.info('manifest: recorded %d artifacts of %s', len(artifacts), stage)
