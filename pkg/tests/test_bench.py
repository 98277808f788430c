import contextlib
import io
import os
import shutil
import tempfile
import unittest
from unittest import mock

from offgrid import config
from offgrid.bench.matrix import (BenchConfig, ExperimentRow, calibrate_speeds, check_equivalence, fill_speedups,
                                  run_matrix)
from offgrid.bench.report import emit_report
from offgrid.core import globals as app_globals
from offgrid.core.errors import ConfigError, EquivalenceViolation
from offgrid.processing.workload_loader import install_workloads
from offgrid.run_app import EXIT_CONFIG, EXIT_EQUIVALENCE, EXIT_OK, main
from offgrid.run_config import RunConfig
from offgrid.runtime.server import TcpServer

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures', 'report')
SMALL = {'count': 3, 'blob_bytes': 1500, 'rounds': 2}


def two_rows():
    return [
        ExperimentRow('blob_detect', 'local', '3g', False, 1, 3.0, 0, 0, 0),
        ExperimentRow('blob_detect', 'eager', '3g', False, 1, 1.5, 1_500_000, 2000, 0),
    ]


class TestReport(unittest.TestCase):

    def test_golden_csv(self):
        with open(os.path.join(FIXTURES, 'two_rows.csv'), encoding='utf-8') as f:
            expected = f.read()
        self.assertEqual(emit_report(fill_speedups(two_rows()), 'csv'), expected)

    def test_empty_rows_give_header_only(self):
        self.assertEqual(emit_report([], 'csv'), ','.join(config.CSV_COLUMNS) + '\n')

    def test_table_aligns_columns(self):
        lines = emit_report(fill_speedups(two_rows()), 'table', clock='virtual').splitlines()
        self.assertTrue(lines[0].startswith('clock: virtual'))
        header, rule, first, second = lines[1:5]
        self.assertEqual(header.index('strategy'), first.index('local'))
        self.assertEqual(header.index('wall_s'), second.index('1.500000'))
        self.assertTrue(set(rule) <= {'-', ' '})

    def test_table_reports_mflops(self):
        row = ExperimentRow('linsolve', 'eager', 'wifi', False, 1, 2.0, 10, 10, 0, flops=4e6, compute_time=1.0)
        text = emit_report([row], 'table')
        self.assertIn('compute-only 4.00, end-to-end 2.00', text)

    def test_unknown_format(self):
        with self.assertRaises(ValueError):
            emit_report([], 'xml')


class TestMatrix(unittest.TestCase):

    def test_blob_matrix_agrees_across_strategies(self):
        bench = BenchConfig(workloads=['blob_detect'], strategies=['local', 'eager', 'lazy', 'pipelined'],
                            links=['3g'], scale=SMALL)
        rows = run_matrix(bench)
        self.assertEqual([r.strategy for r in rows], ['local', 'eager', 'lazy', 'pipelined'])
        self.assertEqual(len({r.result_hash for r in rows}), 1)
        self.assertEqual(rows[0].speedup, 1.0)
        self.assertEqual(rows[0].bytes_up, 0)

    def test_virtual_runs_are_repeatable(self):
        bench = BenchConfig(workloads=['blob_detect_1ofN'], strategies=['lazy', 'pipelined'], links=['wifi'],
                            cache=[False, True], scale=SMALL)
        self.assertEqual(emit_report(run_matrix(bench), 'csv'), emit_report(run_matrix(bench), 'csv'))

    def test_auto_rows_name_the_choice(self):
        bench = BenchConfig(workloads=['linsolve'], strategies=['auto'], links=['3g'], scale={'n': 8, 'k': 1})
        rows = run_matrix(bench)
        self.assertEqual(rows[0].strategy, 'auto:local')
        self.assertIsNotNone(rows[0].flops)

    def test_mismatch_is_reported(self):
        rows = two_rows()
        rows[0].result_hash, rows[1].result_hash = 'aa', 'bb'
        with self.assertRaises(EquivalenceViolation):
            check_equivalence(rows)
        rows[1].alt_used = True
        check_equivalence(rows)

    def test_real_clock_matrix_calibrates_once(self):
        real = BenchConfig(workloads=['linsolve'], strategies=['local'], links=['loopback'], clock='real',
                           scale={'n': 8, 'k': 1})
        with mock.patch('offgrid.bench.matrix.calibrate_speeds') as measure:
            run_matrix(real)
            self.assertEqual(measure.call_count, 1)
            run_matrix(BenchConfig(workloads=['linsolve'], strategies=['local'], links=['loopback'], clock='real',
                                   scale={'n': 8, 'k': 1}, local_speed=1e8))
            run_matrix(BenchConfig(workloads=['linsolve'], strategies=['local'], links=['3g'], scale={'n': 8, 'k': 1}))
            self.assertEqual(measure.call_count, 1)

    def test_calibration_measures_both_speeds(self):
        saved = (app_globals.local_speed, app_globals.server_speed, app_globals.speeds_calibrated)
        try:
            app_globals.reset_speeds()
            with contextlib.redirect_stderr(io.StringIO()) as err:
                local_speed, server_speed = calibrate_speeds(BenchConfig(clock='real'))
            self.assertTrue(app_globals.speeds_calibrated)
            self.assertGreater(local_speed, 0)
            self.assertGreater(server_speed, 0)
            self.assertEqual((app_globals.local_speed, app_globals.server_speed), (local_speed, server_speed))
            self.assertIn('Calibrated speeds', err.getvalue())
        finally:
            app_globals.set_speeds(*saved)

    def test_invalid_configs(self):
        for changes in ({'trials': 0}, {'strategies': ['fast']}, {'workloads': ['chess']}, {'links': ['lte']},
                        {'clock': 'sundial'}, {'cache': []}):
            with self.subTest(changes=changes):
                with self.assertRaises(ConfigError):
                    BenchConfig(**changes).validate()


class TestRunConfig(unittest.TestCase):

    def test_parse(self):
        run = RunConfig.parse("server_ip = 10.0.0.2\nserver_port=5000 # comment\n\nstatic_roots = a, b\n"
                              "cache_enabled = on\ntimeout_s = 2.5\nstrategy = Lazy\nnetwork = custom:5,100,200\n")
        self.assertEqual((run.server_ip, run.server_port), ('10.0.0.2', 5000))
        self.assertEqual(run.static_roots, ['a', 'b'])
        self.assertTrue(run.cache_enabled)
        self.assertEqual((run.timeout_s, run.strategy, run.network), (2.5, 'lazy', 'custom:5,100,200'))

    def test_errors_name_the_line(self):
        for text in ('colour = red', 'server_port = 70000', 'server_port = x', 'cache_enabled = maybe',
                     'strategy = fast', 'network = lte', 'timeout_s = 0', 'just words'):
            with self.subTest(text=text):
                with self.assertRaises(ConfigError) as ctx:
                    RunConfig.parse('\n' + text, source='run.conf')
                self.assertIn('run.conf:2', str(ctx.exception))

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            RunConfig.load(os.path.join(tempfile.gettempdir(), 'no-such-offgrid.conf'))

    def test_override_skips_none(self):
        run = RunConfig(timeout_s=3.0).override(timeout_s=None, strategy='eager')
        self.assertEqual((run.timeout_s, run.strategy), (3.0, 'eager'))


class TestCommandLine(unittest.TestCase):

    def setUp(self):
        self.workdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.workdir)

    def run_main(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            code = main(list(argv))
        return code, out.getvalue(), err.getvalue()

    def test_bench_csv_to_file(self):
        path = os.path.join(self.workdir, 'report.csv')
        code, _, _ = self.run_main('bench', '--workload', 'blob_detect', '--strategy', 'local,lazy',
                                   '--network', '3g', '--n', '3', '--blob-bytes', '1500', '--rounds', '2',
                                   '--format', 'csv', '--out', path)
        self.assertEqual(code, EXIT_OK)
        with open(path, encoding='utf-8') as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], ','.join(config.CSV_COLUMNS))
        self.assertEqual(len(lines), 3)

    def test_config_file_supplies_defaults(self):
        path = os.path.join(self.workdir, 'run.conf')
        with open(path, 'w', encoding='utf-8') as f:
            f.write('strategy = eager\nnetwork = wifi\ncache_enabled = off\n')
        code, out, _ = self.run_main('bench', '--workload', 'linsolve', '--size', '8', '--k', '1',
                                     '--format', 'csv', '--config', path)
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(out.splitlines()[1].startswith('linsolve,eager,wifi,off,1,'))

    def test_configuration_error_exit_code(self):
        code, _, err = self.run_main('bench', '--strategy', 'warp')
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn('warp', err)

    def test_equivalence_violation_exit_code(self):
        with mock.patch('offgrid.bench.matrix.run_matrix', side_effect=EquivalenceViolation('differs')):
            code, _, err = self.run_main('bench', '--workload', 'pi_machin')
        self.assertEqual(code, EXIT_EQUIVALENCE)
        self.assertIn('differs', err)

    def test_profile_command(self):
        code, out, _ = self.run_main('profile', '--network', '3g')
        self.assertEqual(code, EXIT_OK)
        self.assertIn('rtt        150.0', out)

    def test_no_command(self):
        code, _, _ = self.run_main()
        self.assertEqual(code, EXIT_CONFIG)


class TestDemo(unittest.TestCase):

    def setUp(self):
        self.saved = (app_globals.local_speed, app_globals.server_speed, app_globals.speeds_calibrated)
        self.workdir = tempfile.mkdtemp()
        with contextlib.redirect_stdout(io.StringIO()):
            self.server = TcpServer('127.0.0.1', 0, setup=install_workloads, timeout_s=10.0).start()

    def tearDown(self):
        with contextlib.redirect_stdout(io.StringIO()):
            self.server.stop()
        app_globals.set_speeds(*self.saved)
        shutil.rmtree(self.workdir)

    def run_main(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            code = main(list(argv))
        return code, out.getvalue(), err.getvalue()

    def test_demo_against_a_running_server(self):
        address = f'127.0.0.1:{self.server.port}'
        code, out, _ = self.run_main('demo', '--workload', 'linsolve', '--strategy', 'eager', '--server', address)
        self.assertEqual(code, EXIT_OK)
        self.assertIn(f'Connected to {address}', out)
        self.assertIn('Result matches a local run: yes', out)
        self.assertEqual(len(self.server.connections), 1)

    def test_demo_takes_the_address_from_the_config_file(self):
        path = os.path.join(self.workdir, 'run.conf')
        with open(path, 'w', encoding='utf-8') as f:
            f.write(f'server_ip = 127.0.0.1\nserver_port = {self.server.port}\nstrategy = eager\n')
        code, out, _ = self.run_main('demo', '--workload', 'linsolve', '--config', path, '--server')
        self.assertEqual(code, EXIT_OK)
        self.assertIn('Result matches a local run: yes', out)
        self.assertEqual(len(self.server.connections), 1)

    def test_demo_without_an_address_starts_its_own_server(self):
        code, out, _ = self.run_main('demo', '--workload', 'linsolve', '--strategy', 'eager')
        self.assertEqual(code, EXIT_OK)
        self.assertIn('Result matches a local run: yes', out)
        self.assertEqual(self.server.connections, [])

    def test_bad_server_address(self):
        for address in ('nowhere', '127.0.0.1:http', '127.0.0.1:70000', ':5000'):
            with self.subTest(address=address):
                code, _, err = self.run_main('demo', '--server', address)
                self.assertEqual(code, EXIT_CONFIG)
                self.assertIn('configuration error', err)

if __name__ == '__main__':
    unittest.main()
