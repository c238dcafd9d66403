import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from scipy import sparse

from me2vec.ehr import sort_journeys
from me2vec.sampling import seeded_rng
from me2vec.service_graph import (ServiceGraph, WeightedGraph, build_cooccurrence, degree_profile, load_graph,
                                  save_graph, window_pairs)

from .factories import TempDirMixin, ValidationErrorTestMixin, make_journeys, random_events


# Count pairs by walking every window [start + kT, start + (k+1)T) explicitly
def brute_force_weights(journeys, window_days):
    weights = {}
    for journey in journeys.values():
        start = min(e.day for e in journey)
        last = max(e.day for e in journey)
        low = start
        while low <= last:
            services = sorted({e.service_id for e in journey if low <= e.day < low + window_days})
            for i, first in enumerate(services):
                for second in services[i + 1:]:
                    weights[(first, second)] = weights.get((first, second), 0) + 1
            low += window_days
    return weights


def triangle(weight=1):
    return WeightedGraph.from_edges(['A', 'B', 'C'], {('A', 'B'): weight, ('B', 'C'): weight, ('A', 'C'): weight})


class CooccurrenceTests(ValidationErrorTestMixin, SimpleTestCase):

    def testSameWindow(self):
        graph = build_cooccurrence(make_journeys(('P1', 'D1', 'A', 0), ('P1', 'D1', 'B', 3)), 8)
        self.assertEqual(graph.weight('A', 'B'), 1)

    def testWindowBoundary(self):
        graph = build_cooccurrence(make_journeys(('P1', 'D1', 'A', 0), ('P1', 'D1', 'B', 9)), 8)

        self.assertEqual(graph.services, ['A', 'B'])
        self.assertEqual(graph.weight('A', 'B'), 0)
        self.assertEqual(graph.n_edges, 0)

    def testRepeatedServiceCountsOnce(self):
        journeys = make_journeys(
            ('P1', 'D1', 'A', 0), ('P1', 'D2', 'A', 1), ('P1', 'D1', 'B', 2),
            ('P2', 'D3', 'A', 10), ('P2', 'D3', 'B', 11),
        )
        graph = build_cooccurrence(journeys, 8)

        self.assertEqual(graph.weight('A', 'B'), 2)
        self.assertEqual(graph.weight('A', 'A'), 0)
        self.assertEqual(graph.weight('A', 'B'), brute_force_weights(journeys, 8)[('A', 'B')])

    def testWindowsStartAtFirstEvent(self):
        journey = make_journeys(('P1', 'D1', 'A', 5), ('P1', 'D1', 'B', 12), ('P1', 'D1', 'C', 13))['P1']
        self.assertEqual(window_pairs(journey, 8), {('A', 'B'): 1})

    def testMatchesBruteForce(self):
        rng = seeded_rng(21)
        for trial in range(100):
            journeys = sort_journeys(random_events(rng))
            window_days = int(rng.integers(1, 20))
            graph = build_cooccurrence(journeys, window_days)
            expected = brute_force_weights(journeys, window_days)

            self.assertEqual({(a, b): w for a, b, w in graph.edges()}, expected)
            self.assertTrue(np.array_equal(graph.weights.toarray(), graph.weights.toarray().T))

    def testPermutedEventsGiveSameGraph(self):
        rng = seeded_rng(4)
        events = random_events(rng, count=120)
        expected = build_cooccurrence(sort_journeys(events), 7)

        for _ in range(10):
            shuffled = [events[i] for i in rng.permutation(len(events))]
            graph = build_cooccurrence(sort_journeys(shuffled), 7)
            self.assertEqual(graph.nodes, expected.nodes)
            self.assertEqual((graph.weights != expected.weights).nnz, 0)

    def testDoublingWindowNeverLowersWeights(self):
        rng = seeded_rng(8)
        for _ in range(30):
            journeys = {}
            for p in range(10):
                services = rng.permutation(12)[:int(rng.integers(1, 12))]
                days = rng.integers(0, 60, size=len(services))
                journeys.update(make_journeys(*[('P%d' % p, 'D1', 'S%d' % s, int(d))
                                                for s, d in zip(services, days)]))
            window_days = int(rng.integers(1, 15))
            narrow = build_cooccurrence(journeys, window_days).weights.toarray()
            wide = build_cooccurrence(journeys, 2 * window_days).weights.toarray()

            self.assertTrue((wide >= narrow).all())

    def testDoublingWindowWithRepeatedServices(self):
        rng = seeded_rng(12)
        for _ in range(30):
            window_days = int(rng.integers(1, 10))
            rows = []
            for p in range(8):
                services = rng.permutation(12)[:int(rng.integers(2, 12))]
                blocks = rng.integers(0, 6, size=len(services))
                blocks[0] = 0
                rows.append(('P%d' % p, 'D1', 'S%d' % services[0], 0))
                # each service repeats inside the one narrow window it was assigned
                for service, block in zip(services, blocks):
                    for day in rng.integers(0, window_days, size=int(rng.integers(1, 4))):
                        rows.append(('P%d' % p, 'D1', 'S%d' % service, int(block * window_days + day)))
            journeys = make_journeys(*rows)
            narrow = build_cooccurrence(journeys, window_days)
            wide = build_cooccurrence(journeys, 2 * window_days)

            self.assertEqual({(a, b): w for a, b, w in narrow.edges()}, brute_force_weights(journeys, window_days))
            self.assertTrue((wide.weights.toarray() >= narrow.weights.toarray()).all())

    def testSplittingAtWindowBoundary(self):
        rng = seeded_rng(15)
        for _ in range(50):
            window_days = int(rng.integers(1, 10))
            boundary = window_days * int(rng.integers(1, 6))
            rows = [('P1', 'D1', 'S%d' % rng.integers(10), 0),
                    ('P1', 'D1', 'S%d' % rng.integers(10), boundary)]
            rows += [('P1', 'D1', 'S%d' % rng.integers(10), int(rng.integers(0, 2 * boundary)))
                     for _ in range(int(rng.integers(1, 20)))]
            split = [('P1' if day < boundary else 'P2', doctor, service, day) for _, doctor, service, day in rows]

            whole = build_cooccurrence(make_journeys(*rows), window_days)
            parts = build_cooccurrence(make_journeys(*split), window_days)
            self.assertEqual(whole.nodes, parts.nodes)
            self.assertEqual(whole.edges(), parts.edges())

    def testWorkersGiveSameGraph(self):
        journeys = sort_journeys(random_events(seeded_rng(6), count=300))
        single = build_cooccurrence(journeys, 5)
        pooled = build_cooccurrence(journeys, 5, workers=4)

        self.assertEqual(single.nodes, pooled.nodes)
        self.assertEqual((single.weights != pooled.weights).nnz, 0)

    def testWindowTooShort(self):
        with self.assertValidationMessage('window_days'):
            build_cooccurrence(make_journeys(('P1', 'D1', 'A', 0)), 0)

    def testEmptyJourneys(self):
        graph = build_cooccurrence({}, 8)
        self.assertEqual(len(graph), 0)


class DegreeTests(SimpleTestCase):

    def testIsolatedVertex(self):
        graph = WeightedGraph.from_edges(['A', 'B', 'C'], {('A', 'B'): 4})
        self.assertEqual(degree_profile(graph), {'A': 4, 'B': 4, 'C': 0})
        self.assertEqual(graph.isolated(), ['C'])

    def testTriangle(self):
        self.assertEqual(degree_profile(triangle()), {'A': 2, 'B': 2, 'C': 2})

    def testMatchesDenseRowSums(self):
        rng = seeded_rng(2)
        for _ in range(20):
            size = int(rng.integers(2, 15))
            dense = np.triu(rng.integers(0, 5, size=(size, size)) * (rng.random((size, size)) < 0.4), k=1)
            dense = dense + dense.T
            nodes = ['N%d' % i for i in range(size)]
            profile = degree_profile(WeightedGraph(nodes, sparse.csr_matrix(dense)))

            self.assertEqual([profile[n] for n in nodes], dense.sum(axis=1).tolist())


class WeightedGraphTests(SimpleTestCase):

    def testRejectsAsymmetric(self):
        with self.assertRaises(ValidationError):
            WeightedGraph(['A', 'B'], sparse.csr_matrix(np.array([[0, 1], [0, 0]])))

    def testRejectsSelfLoop(self):
        with self.assertRaises(ValidationError):
            WeightedGraph(['A', 'B'], sparse.csr_matrix(np.array([[1, 0], [0, 0]])))

    def testRejectsDuplicateNodes(self):
        with self.assertRaises(ValidationError):
            WeightedGraph(['A', 'A'], sparse.csr_matrix((2, 2)))

    def testNeighbors(self):
        graph = WeightedGraph.from_edges(['A', 'B', 'C'], {('A', 'B'): 2, ('C', 'A'): 5})
        indices, weights = graph.neighbors(graph.index('A'))

        self.assertEqual(indices.tolist(), [1, 2])
        self.assertEqual(weights.tolist(), [2, 5])
        self.assertEqual(graph.degree(graph.index('B')), 1)
        self.assertEqual(graph.edges(), [('A', 'B', 2), ('A', 'C', 5)])


class GraphFileTests(TempDirMixin, ValidationErrorTestMixin, SimpleTestCase):

    def testRoundTripKeepsIsolatedServices(self):
        graph = ServiceGraph.from_edges(['A', 'B', 'C', 'D'], {('A', 'B'): 3, ('B', 'D'): 1})
        save_graph(graph, self.tmp_path('graph.tsv'))
        loaded = load_graph(self.tmp_path('graph.tsv'))

        self.assertIsInstance(loaded, ServiceGraph)
        self.assertEqual(loaded.services, ['A', 'B', 'C', 'D'])
        self.assertEqual(loaded.edges(), graph.edges())

    def testFileFormat(self):
        graph = ServiceGraph.from_edges(['A', 'B', 'C'], {('B', 'A'): 3})
        save_graph(graph, self.tmp_path('graph.tsv'))

        with open(self.tmp_path('graph.tsv')) as f:
            self.assertEqual(f.read(), '# isolated\tC\nA\tB\t3\n')

    def testBadWeight(self):
        path = self.write_file('graph.tsv', 'A\tB\t1\nA\tC\tmany\n')
        with self.assertValidationMessage('line 2'):
            load_graph(path)

    def testBadLine(self):
        path = self.write_file('graph.tsv', 'A B 1\n')
        with self.assertValidationMessage('line 1'):
            load_graph(path)

    def testSelfLoopLine(self):
        path = self.write_file('graph.tsv', 'A\tA\t1\n')
        with self.assertValidationMessage('invalid edge'):
            load_graph(path)
