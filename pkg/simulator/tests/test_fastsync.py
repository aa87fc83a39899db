import numpy as np
from django.test import SimpleTestCase, tag

from clustering.services import Role
from protocol.services import reconstruct
from simulator.config import SimulationConfig, SyncKind, SynchronizerSpec
from simulator.engine import PartitionModel
from simulator.fastsync import FastSyncSynchronizer
from simulator.services import build_context, run_experiment, run_single
from simulator.traces import TraceSet
from stats.services import Gaussian

FASTSYNC = SynchronizerSpec(SyncKind.FASTSYNC)
BSP = SynchronizerSpec(SyncKind.BSP)


def flat_config(**overrides) -> SimulationConfig:
    values = dict(
        n_workers=4,
        rounds=1,
        runs=1,
        slow_factor=2.0,
        heterogeneity_spread=0.0,
        worker_exec_stddev=0.0,
        straggler_probability=0.0,
        ww_msg=Gaussian(2.0, 0.0),
        wc_msg=Gaussian(25.0, 0.0),
        local_task_range=(5.0, 5.0),
    )
    values.update(overrides)
    return SimulationConfig(**values)


class AnalyticIterationTests(SimpleTestCase):
    def test_zero_variance_runtime_is_closed_form(self) -> None:
        report = run_experiment(flat_config(), FASTSYNC)
        # clustering 20 + broadcast 25 + slow pre-sync (25 + 5 + 25 + 5) + sync message 25
        self.assertEqual(report.mean('runtime_per_sync_point_ms'), 130.0)
        self.assertEqual(report.mean('success_option_1'), 1.0)
        self.assertEqual(report.mean('failures'), 0.0)
        self.assertEqual(report.mean('participation'), 1.0)
        self.assertEqual(report.mean('clustering_ms'), 20.0)
        self.assertEqual(report.mean('computation_ms'), 47.5)
        self.assertEqual(report.mean('communication_ms'), 62.5)
        self.assertEqual(report.mean('notifications'), 0.0)
        self.assertEqual(report.mean('decision_messages'), 1.0)
        self.assertEqual(report.mean('progress_messages'), 16.0)
        self.assertEqual(report.status, 'ok')

    def test_later_iterations_skip_clustering(self) -> None:
        iterations = run_single(flat_config(rounds=2), FASTSYNC, 0)
        self.assertEqual(iterations[0].runtime_ms, 130.0)
        self.assertEqual(iterations[1].runtime_ms, 85.0)
        self.assertEqual(iterations[1].clustering_ms, 0.0)
        self.assertEqual(iterations[1].decision_messages, 0)

    def test_fixed_clustering_only_clusters_once(self) -> None:
        iterations = run_single(flat_config(rounds=7, clustering_frequency=None), FASTSYNC, 0)
        self.assertEqual([item.clustering_ms for item in iterations], [20.0] + [0.0] * 6)
        iterations = run_single(flat_config(rounds=7, clustering_frequency=5), FASTSYNC, 0)
        self.assertEqual([item.clustering_ms > 0 for item in iterations], [True] + [False] * 4 + [True, False])


class ProtocolFlowTests(SimpleTestCase):
    def straggling_traces(self) -> TraceSet:
        warmup = np.tile(np.array([[25.0], [25.0], [40.0], [40.0]]), (1, 10))
        current = np.array([[25.0], [25.0], [80.0], [80.0]])
        return TraceSet(('w000', 'w001', 'w002', 'w003'), np.hstack([warmup, current]))

    def test_late_cluster_notifies_and_fast_cluster_fills_the_gap(self) -> None:
        context = build_context(flat_config(), 0, self.straggling_traces())
        synchronizer = FastSyncSynchronizer(context)
        metrics = synchronizer.run_iteration(0)
        trace = synchronizer.last_trace
        self.assertEqual(synchronizer.controller.role_of('w000'), Role.FAST)
        self.assertEqual(synchronizer.controller.role_of('w003'), Role.SLOW)
        self.assertGreaterEqual(metrics.notifications, 2)
        self.assertNotEqual(metrics.outcome, 1)
        # each fast worker ran its one spare local task while the slow cluster was late
        self.assertEqual(metrics.computation_ms, 65.0)
        self.assertTrue(all(phase.terminal for phase in trace.phases.values()))

    def test_degenerate_workload_fails_every_iteration(self) -> None:
        config = flat_config(rounds=3, slow_factor=1.0)
        iterations = run_single(config, FASTSYNC, 0)
        for item in iterations:
            self.assertTrue(item.failed)
            self.assertTrue(item.schedule_failure)
            self.assertEqual(item.participation, 0.0)
            self.assertEqual(item.runtime_ms, 55.0)
        report = run_experiment(config, FASTSYNC)
        self.assertEqual(report.status, 'schedule_failures')


class FastSyncPropertyTests(SimpleTestCase):
    def test_same_seed_same_report(self) -> None:
        config = SimulationConfig(n_workers=8, rounds=12, runs=2, seed=5)
        self.assertEqual(run_experiment(config, FASTSYNC), run_experiment(config, FASTSYNC))

    def test_quorum_and_termination_under_message_loss(self) -> None:
        config = SimulationConfig(
            n_workers=10,
            rounds=40,
            runs=1,
            seed=21,
            straggler_probability=0.3,
            partition=PartitionModel(drop_probability=0.5),
        )
        wc_max = config.wc_msg.mean + 6 * config.wc_msg.std
        synchronizer = FastSyncSynchronizer(build_context(config, 0))
        for k in range(config.rounds):
            metrics = synchronizer.run_iteration(k)
            trace = synchronizer.last_trace
            if trace.schedule is None:
                continue
            if metrics.outcome is not None:
                self.assertGreaterEqual(metrics.synced_workers, config.quorum_size)
                self.assertGreaterEqual(metrics.participation, config.alpha - 1.0 / config.n_workers)
            last_deadline = trace.epoch + trace.schedule.sync_times[2]
            self.assertLessEqual(trace.protocol_end, last_deadline + 1e-9)
            for worker in trace.synced:
                self.assertLessEqual(trace.finish[worker], last_deadline + wc_max)
            for held in trace.received.values():
                for note in held:
                    self.assertEqual(len(note.embedded), note.sequence - 1)
                    self.assertEqual(len(reconstruct([note])), note.sequence)

    def test_decision_messages_do_not_grow_with_workers(self) -> None:
        for n in (5, 20, 100):
            config = SimulationConfig(n_workers=n, rounds=15, runs=1, seed=2)
            fast = run_experiment(config, FASTSYNC)
            self.assertLessEqual(fast.mean('decision_messages'), 8.0)
            synchronizer = FastSyncSynchronizer(build_context(config, 0))
            for k in range(config.rounds):
                metrics = synchronizer.run_iteration(k)
                broadcast = metrics.decision_messages - metrics.notifications
                self.assertIn(broadcast, (0, 1))
                sent = {
                    (note.origin_worker, note.option_index)
                    for held in synchronizer.last_trace.received.values()
                    for note in held
                }
                # one notification per worker and option at most
                self.assertEqual(len(sent), metrics.notifications)
            for spec in (BSP, SynchronizerSpec.parse('ssp:3'), SynchronizerSpec.parse('dssp:3:7')):
                self.assertGreaterEqual(run_experiment(config, spec).mean('decision_messages'), 2 * n)

    @tag('slow')
    def test_fastsync_beats_bsp_on_runtime_and_overhead(self) -> None:
        config = SimulationConfig(n_workers=20, rounds=40, runs=3, seed=4)
        fast = run_experiment(config, FASTSYNC)
        bsp = run_experiment(config, BSP)
        self.assertLess(fast.mean('runtime_per_sync_point_ms'), bsp.mean('runtime_per_sync_point_ms'))
        self.assertLess(fast.mean('communication_ms'), bsp.mean('communication_ms'))


@tag('slow')
class WorkloadStudyTests(SimpleTestCase):
    def test_runtime_grows_with_execution_noise(self) -> None:
        runtimes = []
        for stddev in (1.5, 3.0, 6.0):
            config = SimulationConfig.heterogeneity_study(stddev, rounds=40, runs=20, seed=9)
            report = run_experiment(config, FASTSYNC)
            self.assertAlmostEqual(report.mean('participation'), 0.75, delta=0.1)
            runtimes.append(report.mean('runtime_per_sync_point_ms'))
        self.assertLessEqual(runtimes[0], runtimes[1])
        self.assertLessEqual(runtimes[1], runtimes[2])

    def test_reclustering_tracks_drift(self) -> None:
        config = SimulationConfig(n_workers=20, rounds=100, runs=30, seed=5, drift_rate=0.05)
        iterative = run_experiment(config, FASTSYNC)
        fixed = run_experiment(config.with_values(clustering_frequency=None), FASTSYNC)
        self.assertGreater(iterative.mean('success_option_1'), fixed.mean('success_option_1'))
        self.assertLess(iterative.mean('failures'), fixed.mean('failures'))
        self.assertLess(fixed.mean('runtime_per_sync_point_ms'), iterative.mean('runtime_per_sync_point_ms'))
