from me2vec.ehr import generate_synthetic, load_events, load_labels, load_specialties, sort_journeys
from me2vec.models import EmbeddingTable, JourneyEvent, SyntheticSpec
from me2vec.pipeline import STAGES, load_config, run_pipeline, run_stage, verify_manifest
from me2vec.service_graph import build_cooccurrence, load_graph
from me2vec.tests.factories import make_event, make_journeys, synthetic_dataset
