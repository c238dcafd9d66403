import os
import shutil
import tempfile
from io import StringIO
from unittest import mock

import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from me2vec.ehr import load_events, load_labels, load_specialties
from me2vec.models import EmbeddingTable
from me2vec.pipeline import STAGES, Stage, StageError, load_config, run_stage, verify_manifest
from me2vec.signals import MANIFEST_NAME, read_manifest

from .factories import SMALL_PIPELINE, TempDirMixin, ValidationErrorTestMixin, write_config


## Helper functions
def generate(out, **options):
    call_command('gen-synthetic', out=out, stdout=StringIO(), **options)
    return os.path.join(out, 'hge.cfg')

def add_settings(config_path, **values):
    with open(config_path, 'a') as out:
        for key, value in values.items():
            out.write('%s = %s\n' % (key, value))
    return config_path

def run(config_path, *args, **options):
    stdout = StringIO()
    call_command('run', *args, config=config_path, stdout=stdout, stderr=StringIO(), **options)
    return stdout.getvalue()

def read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()

def all_outputs():
    return [name for stage in STAGES.values() for name in stage.outputs]


class ConfigTests(ValidationErrorTestMixin, TempDirMixin, SimpleTestCase):

    def testDefaults(self):
        cfg = load_config(environ={})

        self.assertEqual(cfg.seed, 0)
        self.assertEqual(cfg.threads, 'deterministic')
        self.assertEqual(cfg.workers, 1)
        self.assertEqual(cfg.window_days, 8)
        self.assertEqual(cfg.doctor_dim, 128)
        self.assertEqual(cfg.eval_train_ratios, [0.2, 0.4, 0.6, 0.8])
        self.assertEqual(cfg.output_dir, 'output')

    def testPrecedence(self):
        path = write_config(self.tmp_path('hge.cfg'), seed=3, threads=2)

        self.assertEqual(load_config(path, environ={}).seed, 3)
        self.assertEqual(load_config(path, environ={'HGE_SEED': '4'}).seed, 4)
        self.assertEqual(load_config(path, {'seed': 5}, environ={'HGE_SEED': '4'}).seed, 5)
        self.assertEqual(load_config(path, {'seed': None}, environ={'HGE_SEED': '4'}).seed, 4)

        self.assertEqual(load_config(path, environ={}).workers, 2)
        self.assertEqual(load_config(path, environ={'HGE_THREADS': '6'}).workers, 6)
        cfg = load_config(path, {'threads': 'deterministic'}, environ={'HGE_THREADS': '6'})
        self.assertEqual(cfg.workers, 1)

    def testEmptyEnvironmentValueIsIgnored(self):
        path = write_config(self.tmp_path('hge.cfg'), seed=3)
        self.assertEqual(load_config(path, environ={'HGE_SEED': ''}).seed, 3)

    def testCommentsAndBlankLines(self):
        path = self.write_file('hge.cfg', '# pipeline\n\nwindow_days = 3  # short windows\n')
        self.assertEqual(load_config(path, environ={}).window_days, 3)

    def testHashInsideValueIsKept(self):
        path = self.write_file('hge.cfg', 'events = data#1/events.csv  # raw export\nwindow_days = 3 # note\n')
        cfg = load_config(path, environ={})

        self.assertEqual(cfg.events, self.tmp_path('data#1', 'events.csv'))
        self.assertEqual(cfg.window_days, 3)

    def testUnknownKey(self):
        path = write_config(self.tmp_path('hge.cfg'), window_days=3, windows=4)
        with self.assertValidationMessage("line 2: unknown key 'windows'"):
            load_config(path, environ={})

    def testMissingEquals(self):
        path = self.write_file('hge.cfg', 'seed 4\n')
        with self.assertValidationMessage('expected "key = value"'):
            load_config(path, environ={})

    def testInvalidValues(self):
        for values in ({'window_days': 0}, {'seed': 'abc'}, {'threads': 'many'}, {'threads': '0'},
                       {'eval_train_ratios': '0.5,1.0'}, {'return_param': '-1'}, {'events_format': 'xml'}):
            path = write_config(self.tmp_path('hge.cfg'), **values)
            with self.assertValidationMessage('invalid configuration: %s' % next(iter(values))):
                load_config(path, environ={})

    def testInvalidEnvironmentValue(self):
        with self.assertValidationMessage('threads'):
            load_config(environ={'HGE_THREADS': 'fast'})

    def testDoctorDimMustMatchHeads(self):
        path = write_config(self.tmp_path('hge.cfg'), heads=2, head_dim=8, doctor_dim=10)
        with self.assertValidationMessage('doctor_dim must equal heads * head_dim (2 * 8)'):
            load_config(path, environ={})

    def testPathsResolveAgainstConfigDirectory(self):
        os.makedirs(self.tmp_path('conf'))
        path = write_config(self.tmp_path('conf', 'hge.cfg'), events='../data/events.csv', labels='labels.csv')
        cfg = load_config(path, environ={})

        self.assertEqual(cfg.events, self.tmp_path('data', 'events.csv'))
        self.assertEqual(cfg.labels, self.tmp_path('conf', 'labels.csv'))
        self.assertEqual(cfg.output_dir, self.tmp_path('conf', 'output'))
        self.assertEqual(cfg.path('graph.tsv'), self.tmp_path('conf', 'output', 'graph.tsv'))

    def testHashIgnoresOutputDirectory(self):
        first = write_config(self.tmp_path('a.cfg'), seed=1, output_dir='run-a')
        second = write_config(self.tmp_path('b.cfg'), seed=1, output_dir='run-b')
        third = write_config(self.tmp_path('c.cfg'), seed=2, output_dir='run-a')

        self.assertEqual(load_config(first, environ={}).hash(), load_config(first, environ={}).hash())
        self.assertEqual(load_config(first, environ={}).hash(), load_config(second, environ={}).hash())
        self.assertNotEqual(load_config(first, environ={}).hash(), load_config(third, environ={}).hash())

    def testSubConfigs(self):
        path = write_config(self.tmp_path('hge.cfg'), **SMALL_PIPELINE)
        cfg = load_config(path, environ={})

        self.assertEqual(cfg.doctor_config().heads * cfg.doctor_config().head_dim, cfg.doctor_dim)
        self.assertEqual(cfg.sgns_config().dim, 16)
        self.assertEqual(cfg.eval_config().train_ratios, (0.5, 0.8))
        self.assertEqual(cfg.walk_config().walk_length, 20)


class GenSyntheticCommandTests(TempDirMixin, SimpleTestCase):

    def testWritesLoadableDataset(self):
        generate(self.tmp, n_patients=30, n_doctors=8, n_services=11, n_specialties=2)

        events = load_events(self.tmp_path('events.csv'))
        specialties = load_specialties(self.tmp_path('specialties.csv'))
        labels = load_labels(self.tmp_path('labels.csv'))
        self.assertEqual(len({e.patient_id for e in events}), 30)
        self.assertEqual(len(labels), 30)
        self.assertEqual(len(specialties), 8)
        self.assertEqual(len(set(specialties.values())), 2)
        self.assertTrue(os.path.exists(self.tmp_path('hge.cfg')))

    def testSameSeedSameFiles(self):
        generate(self.tmp_path('a'), n_patients=40, seed=7)
        generate(self.tmp_path('b'), n_patients=40, seed=7)
        generate(self.tmp_path('c'), n_patients=40, seed=8)

        for name in ('events.csv', 'specialties.csv', 'labels.csv', 'hge.cfg'):
            self.assertEqual(read_bytes(self.tmp_path('a', name)), read_bytes(self.tmp_path('b', name)))
        self.assertNotEqual(read_bytes(self.tmp_path('a', 'events.csv')), read_bytes(self.tmp_path('c', 'events.csv')))

    def testSeedFromEnvironment(self):
        with mock.patch.dict(os.environ, {'HGE_SEED': '7'}):
            generate(self.tmp_path('a'), n_patients=40)
        generate(self.tmp_path('b'), n_patients=40, seed=7)

        self.assertEqual(read_bytes(self.tmp_path('a', 'events.csv')), read_bytes(self.tmp_path('b', 'events.csv')))

    def testPairRuleGivesBothClasses(self):
        generate(self.tmp, n_patients=100, label_rule='doctor_service_pair', seed=3)
        self.assertEqual(set(load_labels(self.tmp_path('labels.csv')).values()), {0, 1})

    def testInvalidSpec(self):
        with self.assertRaisesMessage(CommandError, 'invalid synthetic spec: n_specialties'):
            generate(self.tmp, n_doctors=2, n_specialties=3)


class StageTests(TempDirMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        self.config = add_settings(generate(self.tmp, n_patients=30, n_doctors=8, n_specialties=2), **SMALL_PIPELINE)

    def testBuildGraphRecordsManifest(self):
        cfg = load_config(self.config, environ={})
        self.assertTrue(run_stage('build-graph', cfg))

        entry = read_manifest(cfg.output_dir)['graph.tsv']
        self.assertEqual(entry['stage'], 'build-graph')
        self.assertEqual(entry['config_hash'], cfg.hash())
        self.assertEqual(entry['seed'], 0)
        self.assertEqual(len(entry['sha256']), 64)

    def testExistingOutputsAreSkipped(self):
        cfg = load_config(self.config, environ={})
        run_stage('build-graph', cfg)

        self.assertFalse(run_stage('build-graph', cfg))
        self.assertTrue(run_stage('build-graph', cfg, force=True))

    def testMissingUpstreamArtifact(self):
        cfg = load_config(self.config, environ={})
        with self.assertRaisesMessage(StageError, 'stage train-services failed'):
            run_stage('train-services', cfg)

    def testCorruptEventsFile(self):
        with open(self.tmp_path('events.csv'), 'a') as out:
            out.write('P1,D1,,2020-01-05\n')

        with self.assertRaisesMessage(CommandError, 'stage build-graph failed'):
            call_command('build-graph', config=self.config, stdout=StringIO())
        self.assertFalse(os.path.exists(self.tmp_path('output', 'graph.tsv')))

    def testRuntimeErrorBecomesStageError(self):
        def exhausted(cfg):
            raise RuntimeError('CUDA out of memory')

        cfg = load_config(self.config, environ={})
        with mock.patch.dict(STAGES, {'build-graph': Stage('build-graph', ('graph.tsv',), exhausted)}):
            with self.assertRaisesMessage(StageError, 'stage build-graph failed: CUDA out of memory'):
                run_stage('build-graph', cfg)
        self.assertNotIn('graph.tsv', read_manifest(cfg.output_dir))

    def testMissingLabelsSetting(self):
        config = write_config(self.tmp_path('bare.cfg'), events='events.csv', **SMALL_PIPELINE)
        cfg = load_config(config, environ={})

        with self.assertRaisesMessage(StageError, 'configuration lacks labels'):
            run_stage('evaluate', cfg)

    def testInvalidConfigIsCommandError(self):
        add_settings(self.config, heads=3)
        with self.assertRaisesMessage(CommandError, 'doctor_dim must equal'):
            call_command('build-graph', config=self.config, stdout=StringIO())

    def testSeedFlagLandsInManifest(self):
        call_command('build-graph', config=self.config, seed=11, stdout=StringIO())
        self.assertEqual(read_manifest(self.tmp_path('output'))['graph.tsv']['seed'], 11)


class RunCommandTests(TempDirMixin, SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls._data = tempfile.TemporaryDirectory()
        cls.data = cls._data.name
        config = add_settings(generate(cls.data, n_patients=200, seed=5), **SMALL_PIPELINE)
        cls.first = add_settings(shutil.copy(config, os.path.join(cls.data, 'first.cfg')), output_dir='first')
        cls.second = add_settings(shutil.copy(config, os.path.join(cls.data, 'second.cfg')), output_dir='second')
        cls.output = run(cls.first)
        run(cls.second)

    @classmethod
    def tearDownClass(cls):
        cls._data.cleanup()
        super().tearDownClass()

    def data_path(self, *parts):
        return os.path.join(self.data, *parts)

    def testEveryArtifactIsWritten(self):
        for name in all_outputs() + [MANIFEST_NAME]:
            self.assertTrue(os.path.exists(self.data_path('first', name)), name)

        for name in STAGES:
            self.assertIn('%s: done' % name, self.output)
        self.assertIn('all artifacts match', self.output)

    def testManifestMatchesArtifacts(self):
        manifest = read_manifest(self.data_path('first'))

        self.assertEqual(sorted(manifest), sorted(all_outputs()))
        self.assertEqual(verify_manifest(self.data_path('first')), [])
        self.assertEqual(len({entry['config_hash'] for entry in manifest.values()}), 1)

    def testRerunSkipsEveryStage(self):
        before = read_bytes(self.data_path('first', MANIFEST_NAME))
        output = run(self.first)

        for name in STAGES:
            self.assertIn('%s: skipped' % name, output)
        self.assertEqual(read_bytes(self.data_path('first', MANIFEST_NAME)), before)

    def testSeparateRunsAreBitIdentical(self):
        for name in ('graph.tsv', 'services.emb', 'doctors.emb', 'patients.emb', 'hybrid_graph.tsv',
                     'report.csv', 'report.txt', MANIFEST_NAME):
            self.assertEqual(read_bytes(self.data_path('first', name)), read_bytes(self.data_path('second', name)),
                             name)

    def testReportCoversEveryMethod(self):
        frame = pd.read_csv(self.data_path('first', 'report.csv'))

        self.assertEqual(set(frame['method']), {'me2vec', 'node2vec (service)', 'node2vec (doctor)',
                                                'line2 (service)', 'line2 (doctor)'})
        self.assertEqual(sorted(set(frame['ratio'])), [0.5, 0.8])
        self.assertEqual(len(frame), 5 * 2 * 2)
        self.assertTrue(frame['macro_f1'].between(0, 1).all())

    def testTamperedArtifactIsReported(self):
        shutil.copytree(self.data_path('first'), self.tmp_path('copy'))
        with open(self.tmp_path('copy', 'report.txt'), 'a') as out:
            out.write('edited\n')
        os.remove(self.tmp_path('copy', 'doctors_projection.svg'))

        self.assertEqual(verify_manifest(self.tmp_path('copy')), ['doctors_projection.svg', 'report.txt'])

    def testProjectSingleEmbedding(self):
        prefix = self.tmp_path('doctors')
        stdout = StringIO()
        call_command('project', embedding=self.data_path('first', 'doctors.emb'), entity_type='doctor', out=prefix,
                     specialties=self.data_path('specialties.csv'), stdout=stdout)

        frame = pd.read_csv(prefix + '.csv')
        self.assertEqual(list(frame.columns), ['id', 'x', 'y'])
        doctors = EmbeddingTable.load(self.data_path('first', 'doctors.emb'), 'doctor')
        self.assertEqual(frame['id'].tolist(), doctors.ids)
        self.assertIn('specialty0', read_bytes(prefix + '.svg').decode())
        self.assertIn('wrote', stdout.getvalue())

    def testProjectMissingEmbedding(self):
        with self.assertRaisesMessage(CommandError, 'stage project failed'):
            call_command('project', embedding=self.tmp_path('nothing.emb'), stdout=StringIO())


@tag('acceptance')
class FusionTests(TempDirMixin, SimpleTestCase):

    def testMultigraphBeatsSingleViewBaselines(self):
        config = generate(self.tmp, n_patients=600, label_rule='doctor_service_pair', seed=2)
        add_settings(config, eval_train_ratios='0.8', eval_repeats=10)
        run(config)

        frame = pd.read_csv(self.tmp_path('output', 'report.csv'))
        macro = frame.groupby('method')['macro_f1'].mean()
        self.assertGreaterEqual(macro['me2vec'] - macro['node2vec (service)'], 0.05)
        self.assertGreaterEqual(macro['me2vec'] - macro['line2 (doctor)'], 0.05)
