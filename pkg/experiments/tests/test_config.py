from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from experiments.config import ExperimentSpec, Sweep, parse_config, serialize_spec
from scheduler.services import CompositionMode
from simulator.config import DEFAULT_SYNCHRONIZERS, SimulationConfig, SynchronizerSpec, TaskProfile
from stats.services import Gaussian


class ParseConfigTests(SimpleTestCase):
    def assertRejected(self, text: str, expected: str) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config(text)
        self.assertIn(expected, ctx.exception.messages)

    def test_empty_document_uses_defaults(self) -> None:
        spec = parse_config("")
        self.assertEqual(spec.base, SimulationConfig())
        self.assertEqual(spec.synchronizers, DEFAULT_SYNCHRONIZERS)
        self.assertIsNone(spec.sweep)
        self.assertEqual([cell.label for cell in spec.cells()], ['base'])

    def test_comments_and_blank_lines_are_skipped(self) -> None:
        spec = parse_config("# header\n\nn_workers: 8  # eight workers\nalpha: 0.5\n")
        self.assertEqual(spec.base.n_workers, 8)
        self.assertEqual(spec.base.alpha, 0.5)
        self.assertEqual(spec.base.quorum_size, 4)

    def test_alpha_out_of_range_names_key_and_line(self) -> None:
        self.assertRejected("n_workers: 10\nalpha: 1.5\n", "line 2: alpha must be in [0, 1], got 1.5")

    def test_unknown_key(self) -> None:
        self.assertRejected("bogus: 3\n", "line 1: unknown key 'bogus'")

    def test_missing_separator(self) -> None:
        self.assertRejected("n_workers 10\n", "line 1: expected 'key: value', got 'n_workers 10'")

    def test_duplicate_key(self) -> None:
        self.assertRejected("runs: 3\nruns: 4\n", "line 2: duplicate key 'runs', first set on line 1")

    def test_type_mismatch(self) -> None:
        self.assertRejected("n_workers: many\n", "line 1: n_workers: expected an integer, got 'many'")

    def test_every_problem_is_reported(self) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config("bogus: 1\nrounds: x\nmode: sideways\n")
        self.assertEqual(len(ctx.exception.messages), 3)

    def test_nested_keys(self) -> None:
        spec = parse_config(
            "wc_msg.mean: 30\n"
            "wc_msg.stddev: 3\n"
            "local_task_range.max: 8\n"
            "partition.drop_probability: 0.1\n"
            "payoff.u2: 70\n"
            "dbscan.eps: auto\n"
            "dbscan.min_pts: 3\n"
            "clustering_frequency: fixed\n"
            "task_profile: LONG\n"
            "mode: corrected\n"
        )
        config = spec.base
        self.assertEqual(config.wc_msg, Gaussian(30.0, 9.0))
        self.assertEqual(config.local_task_range, (5.0, 8.0))
        self.assertEqual(config.partition.drop_probability, 0.1)
        self.assertEqual(config.payoff.sync_utils, (100.0, 70.0, 30.0))
        self.assertIsNone(config.dbscan_eps)
        self.assertEqual(config.dbscan_min_pts, 3)
        self.assertTrue(config.fixed_clustering)
        self.assertIs(config.task_profile, TaskProfile.LONG)
        self.assertIs(config.mode, CompositionMode.CORRECTED)

    def test_invalid_partition_points_at_its_line(self) -> None:
        self.assertRejected(
            "runs: 2\npartition.drop_probability: 1.5\n",
            "line 2: partition.drop_probability must be in [0, 1], got 1.5",
        )

    def test_negative_payoff_rate(self) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config("payoff.wait_rate: -1\n")
        self.assertTrue(ctx.exception.messages[0].startswith("line 1: payoff.wait_rate:"))


class SynchronizerKeyTests(SimpleTestCase):
    def test_listed_synchronizers_replace_defaults(self) -> None:
        spec = parse_config("synchronizer: bsp\nsynchronizer: ssp:2\n")
        self.assertEqual(spec.synchronizers, (SynchronizerSpec.parse('bsp'), SynchronizerSpec.parse('ssp:2')))

    def test_dssp_staleness_above_r_max(self) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config("synchronizer: dssp:5:3\n")
        self.assertEqual(ctx.exception.messages, ["line 1: synchronizer: dssp staleness 5 exceeds r_max 3"])

    def test_duplicate_synchronizer(self) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config("synchronizer: bsp\nsynchronizer: BSP\n")
        self.assertEqual(ctx.exception.messages, ["line 2: synchronizer 'bsp' is listed twice"])


class SweepTests(SimpleTestCase):
    def test_sweep_expands_to_cells(self) -> None:
        spec = parse_config("sweep.parameter: n_workers\nsweep.value: 5\nsweep.value: 100\n")
        cells = spec.cells()
        self.assertEqual([cell.label for cell in cells], ['n_workers=5', 'n_workers=100'])
        self.assertEqual([cell.config.n_workers for cell in cells], [5, 100])
        self.assertIsInstance(cells[0].config.n_workers, int)
        self.assertEqual([cell.index for cell in cells], [0, 1])
        self.assertEqual(spec.base.n_workers, 20)

    def test_sweep_over_nested_key(self) -> None:
        spec = parse_config("sweep.parameter: wc_msg.mean\nsweep.value: 10\nsweep.value: 40\n")
        self.assertEqual([cell.config.wc_msg.mean for cell in spec.cells()], [10.0, 40.0])

    def test_non_integral_value_for_integer_key(self) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config("sweep.parameter: n_workers\nsweep.value: 2.5\n")
        self.assertEqual(
            ctx.exception.messages,
            ["line 2: sweep n_workers=2.5: n_workers takes integers, got 2.5"],
        )

    def test_cells_are_validated(self) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config("sweep.parameter: alpha\nsweep.value: 0.5\nsweep.value: 2\n")
        self.assertEqual(
            ctx.exception.messages,
            ["line 2: sweep alpha=2: alpha must be in [0, 1], got 2.0"],
        )

    def test_values_need_parameter(self) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config("sweep.value: 3\n")
        self.assertEqual(ctx.exception.messages, ["line 1: sweep.value needs a sweep.parameter"])

    def test_parameter_needs_values(self) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config("sweep.parameter: alpha\n")
        self.assertEqual(ctx.exception.messages, ["line 1: sweep.parameter needs at least one sweep.value"])

    def test_non_numeric_parameter(self) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config("sweep.parameter: mode\nsweep.value: 1\n")
        self.assertIn("line 1: sweep.parameter: 'mode' is not a numeric config key", ctx.exception.messages)

    def test_duplicate_value(self) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config("sweep.parameter: alpha\nsweep.value: 0.5\nsweep.value: 0.50\n")
        self.assertEqual(ctx.exception.messages, ["line 3: sweep.value 0.5 is listed twice"])


class SpecOptionTests(SimpleTestCase):
    def test_run_options(self) -> None:
        spec = parse_config("output_dir: out/a\nemit_plots: yes\ntraces: cluster.csv\nworkers: 3\n")
        self.assertEqual(spec.output_dir, 'out/a')
        self.assertTrue(spec.emit_plots)
        self.assertEqual(spec.traces, 'cluster.csv')
        self.assertEqual(spec.workers, 3)

    def test_workers_must_be_positive(self) -> None:
        with self.assertRaises(ValidationError) as ctx:
            parse_config("workers: 0\n")
        self.assertEqual(ctx.exception.messages, ["line 1: workers must be >= 1, got 0"])

    def test_with_seed_replaces_base_seed(self) -> None:
        spec = parse_config("seed: 4\nsweep.parameter: alpha\nsweep.value: 0.5\n").with_seed(11)
        self.assertEqual(spec.base.seed, 11)
        self.assertEqual(spec.cells()[0].config.seed, 11)


class SerializeSpecTests(SimpleTestCase):
    def test_default_spec_round_trips(self) -> None:
        spec = ExperimentSpec()
        self.assertEqual(parse_config(serialize_spec(spec)), spec)

    def test_customised_spec_round_trips(self) -> None:
        base = SimulationConfig(
            n_workers=12,
            alpha=0.55,
            rounds=40,
            runs=7,
            seed=3,
            ww_msg=Gaussian(1.5, 0.25),
            clustering_frequency=None,
            dbscan_eps=4.5,
            mode=CompositionMode.CORRECTED,
        )
        spec = ExperimentSpec(
            base=base,
            synchronizers=(SynchronizerSpec.parse('fastsync'), SynchronizerSpec.parse('dssp:2:6')),
            sweep=Sweep('alpha', (0.3, 0.9)),
            output_dir='results/alpha',
            emit_plots=True,
            workers=2,
        )
        self.assertEqual(parse_config(serialize_spec(spec)), spec)
