import numpy as np
from django.test import SimpleTestCase

from simulator.config import (
    ConfigError,
    SimulationConfig,
    SyncKind,
    SynchronizerSpec,
    TaskGraph,
    TaskKind,
    TaskNode,
    TaskProfile,
)
from simulator.engine import SimulationError
from simulator.metrics import METRICS, IterationMetrics, MetricsAccumulator
from simulator.services import build_context, initial_schedule, run_experiment
from simulator.traces import TraceError, TraceSet, generate_traces, slow_group_size, worker_names
from stats.services import Gaussian


def quiet_config(**overrides) -> SimulationConfig:
    values = dict(
        n_workers=20,
        rounds=200,
        slow_factor=1.0,
        straggler_probability=0.0,
    )
    values.update(overrides)
    return SimulationConfig(**values)


class TraceGenerationTests(SimpleTestCase):
    def test_profile_means(self) -> None:
        for profile, expected in ((TaskProfile.SHORT, 25.0), (TaskProfile.LONG, 80.0)):
            config = quiet_config(task_profile=profile)
            traces = generate_traces(config, np.random.default_rng(1))
            self.assertAlmostEqual(float(traces.runtimes.mean()), expected, delta=3.0)

    def test_drift_shifts_runtimes(self) -> None:
        config = quiet_config(drift_rate=0.1, heterogeneity_spread=0.0, worker_exec_stddev=0.0)
        traces = generate_traces(config, np.random.default_rng(2), iterations=101)
        shift = traces.runtimes[:, 100] - traces.runtimes[:, 0]
        self.assertTrue(np.all(shift >= 0.0) and np.all(shift <= 20.0 + 1e-9))
        self.assertGreater(float(np.ptp(shift)), 1.0)
        self.assertAlmostEqual(float(shift.mean()), 10.0, delta=4.0)

    def test_slow_group_is_scaled(self) -> None:
        config = quiet_config(
            n_workers=4, slow_factor=2.0, heterogeneity_spread=0.0, worker_exec_stddev=0.0
        )
        traces = generate_traces(config, np.random.default_rng(3), iterations=5)
        self.assertEqual(traces.worker_ids, ('w000', 'w001', 'w002', 'w003'))
        self.assertTrue(np.all(traces.runtimes[:2] == 25.0))
        self.assertTrue(np.all(traces.runtimes[2:] == 50.0))

    def test_slow_group_size(self) -> None:
        self.assertEqual(slow_group_size(SimulationConfig(n_workers=20)), 10)
        self.assertEqual(slow_group_size(SimulationConfig(n_workers=2)), 1)
        self.assertEqual(slow_group_size(SimulationConfig(n_workers=4, slow_fraction=0.99)), 3)

    def test_same_seed_same_traces(self) -> None:
        config = SimulationConfig(n_workers=6, rounds=10)
        first = generate_traces(config, np.random.default_rng(9))
        second = generate_traces(config, np.random.default_rng(9))
        self.assertTrue(np.array_equal(first.runtimes, second.runtimes))
        self.assertTrue(np.all(first.runtimes >= 0.0))

    def test_worker_names_are_padded(self) -> None:
        self.assertEqual(worker_names(3), ('w000', 'w001', 'w002'))
        self.assertEqual(worker_names(1500)[-1], 'w1499')


class TraceSetTests(SimpleTestCase):
    def test_rejects_malformed_matrices(self) -> None:
        with self.assertRaises(TraceError):
            TraceSet(('a', 'b'), np.ones((3, 4)))
        with self.assertRaises(TraceError):
            TraceSet(('a', 'b'), np.array([[1.0, -1.0], [1.0, 1.0]]))
        with self.assertRaises(TraceError):
            TraceSet(('a', 'a'), np.ones((2, 2)))
        with self.assertRaises(TraceError):
            TraceSet(('a',), np.array([[np.nan]]))

    def test_does_not_freeze_caller_array(self) -> None:
        runtimes = np.ones((2, 3))
        traces = TraceSet(('a', 'b'), runtimes)
        runtimes[0, 0] = 5.0
        self.assertEqual(traces.runtimes[0, 0], 1.0)
        self.assertFalse(traces.runtimes.flags.writeable)

    def test_cycling_repeats_iterations(self) -> None:
        traces = TraceSet(('a',), np.array([[1.0, 2.0, 3.0]]))
        with self.assertLogs('simulator.traces', level='WARNING'):
            cycled = traces.cycled(7)
        self.assertEqual(cycled.runtimes[0].tolist(), [1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0])
        self.assertEqual(traces.cycled(2).n_iterations, 2)

    def test_restricted_takes_leading_workers(self) -> None:
        traces = TraceSet(('a', 'b', 'c'), np.ones((3, 2)))
        self.assertEqual(traces.restricted(2).worker_ids, ('a', 'b'))
        with self.assertRaises(TraceError):
            traces.restricted(4)


class TaskGraphTests(SimpleTestCase):
    def test_default_shape(self) -> None:
        graph = TaskGraph.default()
        self.assertEqual(graph.sync_points, 1)
        self.assertEqual(graph.local_count, 2)
        self.assertEqual(graph.report_count, 4)
        self.assertEqual(sum(1 for node in graph.nodes if node.kind is TaskKind.ASYNC), 2)
        self.assertIs(graph.nodes[-1].kind, TaskKind.SYNC)

    def test_pre_sync_duration(self) -> None:
        graph = TaskGraph.default()
        self.assertEqual(graph.pre_sync_segments(50.0, [5.0, 5.0]), [25.0, 5.0, 25.0, 5.0])
        self.assertEqual(graph.pre_sync_duration(50.0, [5.0, 5.0]), 60.0)
        with self.assertRaises(ConfigError):
            graph.pre_sync_duration(50.0, [5.0])

    def test_invalid_graphs(self) -> None:
        with self.assertRaises(ConfigError):
            TaskGraph((TaskNode(TaskKind.ASYNC, 1.0),))
        with self.assertRaises(ConfigError):
            TaskGraph((TaskNode(TaskKind.ASYNC, 0.5), TaskNode(TaskKind.SYNC)))
        with self.assertRaises(ConfigError):
            TaskGraph((TaskNode(TaskKind.SYNC), TaskNode(TaskKind.ASYNC, 1.0), TaskNode(TaskKind.SYNC)))


class SimulationConfigTests(SimpleTestCase):
    def test_defaults_are_valid(self) -> None:
        config = SimulationConfig()
        self.assertEqual(config.validation_errors(), [])
        self.assertEqual(config.quorum_size, 14)
        self.assertEqual(config.wc_msg, Gaussian(25.0, 4.0))

    def test_errors_name_the_key(self) -> None:
        with self.assertRaises(ConfigError) as ctx:
            SimulationConfig(alpha=1.5, n_workers=1).validate()
        self.assertTrue(any('alpha' in error for error in ctx.exception.errors))
        self.assertTrue(any('n_workers' in error for error in ctx.exception.errors))

    def test_quorum_size(self) -> None:
        self.assertEqual(SimulationConfig(n_workers=10, alpha=0.7).quorum_size, 7)
        self.assertEqual(SimulationConfig(n_workers=10, alpha=0.0).quorum_size, 1)
        self.assertEqual(SimulationConfig(n_workers=3, alpha=0.5).quorum_size, 2)

    def test_recluster_schedule(self) -> None:
        periodic = SimulationConfig(clustering_frequency=5)
        self.assertEqual([periodic.reclusters_at(k) for k in range(6)], [True] + [False] * 4 + [True])
        fixed = SimulationConfig(clustering_frequency=None)
        self.assertEqual([fixed.reclusters_at(k) for k in range(6)], [True] + [False] * 5)

    def test_with_values_keeps_original(self) -> None:
        config = SimulationConfig()
        changed = config.with_values(n_workers=50)
        self.assertEqual(config.n_workers, 20)
        self.assertEqual(changed.n_workers, 50)
        self.assertEqual(changed.to_dict()['clustering_frequency'], 5)


class MetricsAccumulatorTests(SimpleTestCase):
    def run_of(self, runtime: float) -> list:
        return [IterationMetrics(runtime_ms=runtime, outcome=1), IterationMetrics(runtime_ms=runtime, outcome=1)]

    def test_merge_order_does_not_matter(self) -> None:
        first = MetricsAccumulator().add_run(0, self.run_of(10.0))
        second = MetricsAccumulator().add_run(1, self.run_of(20.0))
        self.assertEqual(first.merge(second).report('bsp'), second.merge(first).report('bsp'))

    def test_sample_standard_deviation(self) -> None:
        accumulator = MetricsAccumulator().add_run(0, self.run_of(10.0)).add_run(1, self.run_of(20.0))
        summary = accumulator.report('bsp').summaries['runtime_per_sync_point_ms']
        self.assertEqual(summary.mean, 15.0)
        self.assertAlmostEqual(summary.stddev, 7.0710678, places=6)
        self.assertEqual(summary.n, 2)

    def test_single_run_has_zero_spread(self) -> None:
        report = MetricsAccumulator().add_run(0, self.run_of(10.0)).report('bsp')
        self.assertEqual(report.summaries['runtime_per_sync_point_ms'].stddev, 0.0)

    def test_duplicate_run_rejected(self) -> None:
        accumulator = MetricsAccumulator().add_run(0, self.run_of(10.0))
        with self.assertRaises(SimulationError):
            accumulator.add_run(0, self.run_of(10.0))
        with self.assertRaises(SimulationError):
            accumulator.merge(MetricsAccumulator().add_run(0, self.run_of(5.0)))

    def test_participation_bounds(self) -> None:
        with self.assertRaises(SimulationError):
            IterationMetrics(runtime_ms=1.0, participation=1.2)

    def test_blocked_units(self) -> None:
        values = IterationMetrics(runtime_ms=10.0, blocked_ms=12.5, sync_points=2).values()
        self.assertEqual(values['blocked_units'], 2.5)
        self.assertEqual(values['runtime_per_sync_point_ms'], 5.0)


class RunExperimentTests(SimpleTestCase):
    def small(self, **overrides) -> SimulationConfig:
        values = dict(n_workers=4, rounds=3, runs=2, seed=1)
        values.update(overrides)
        return SimulationConfig(**values)

    def test_report_holds_every_metric(self) -> None:
        report = run_experiment(self.small(), SynchronizerSpec(SyncKind.BSP))
        self.assertEqual(set(report.summaries), set(METRICS))
        rows = report.to_rows('n=4')
        self.assertEqual(len(rows), len(METRICS))
        self.assertEqual(
            set(rows[0]), {'cell', 'synchronizer', 'metric', 'mean', 'stddev', 'n', 'status'}
        )
        self.assertTrue(all(row['n'] == 2 for row in rows))

    def test_asp_participation_not_applicable(self) -> None:
        report = run_experiment(self.small(), SynchronizerSpec.parse('asp'))
        self.assertFalse(report.participation_applicable)
        self.assertTrue(run_experiment(self.small(), SynchronizerSpec.parse('ssp:3')).participation_applicable)

    def test_invalid_synchronizer_rejected(self) -> None:
        with self.assertRaises(ConfigError):
            run_experiment(self.small(), SynchronizerSpec(SyncKind.DSSP, 5, 3))

    def test_invalid_config_rejected(self) -> None:
        with self.assertRaises(ConfigError):
            run_experiment(self.small(alpha=-0.1), SynchronizerSpec(SyncKind.BSP))

    def test_runs_share_traces_across_synchronizers(self) -> None:
        config = self.small()
        first = build_context(config, 1)
        second = build_context(config, 1)
        self.assertTrue(np.array_equal(first.traces.runtimes, second.traces.runtimes))
        self.assertFalse(np.array_equal(first.traces.runtimes, build_context(config, 0).traces.runtimes))

    def test_initial_schedule_for_two_speed_groups(self) -> None:
        config = SimulationConfig(
            n_workers=4,
            rounds=1,
            slow_factor=2.0,
            heterogeneity_spread=0.0,
            worker_exec_stddev=0.0,
            straggler_probability=0.0,
            local_task_range=(5.0, 5.0),
        )
        schedule, outliers = initial_schedule(config)
        self.assertEqual(outliers, 0)
        self.assertEqual(schedule.sync_times[0], 60.0)
        self.assertTrue(schedule.sync_times[0] <= schedule.sync_times[1] <= schedule.sync_times[2])
