import contextlib
import csv
import io
import json
import os
import tempfile
import unittest

from phasecode.cli import build_parser, main


class TestCli(unittest.TestCase):
    def _run(self, argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            code = main(argv)
        return code, stdout.getvalue(), stderr.getvalue()

    def test_parser_accepts_grids(self):
        args = build_parser().parse_args(['sweep', '--k', '100', '200', '--mk', '1.3', '1.5', '--p-star', '0.01'])
        self.assertEqual(args.mode, 'sweep')
        self.assertEqual(args.k, [100, 200])
        self.assertEqual(args.mk, [1.3, 1.5])
        self.assertEqual(args.p_star, 0.01)

    def test_density_evolution(self):
        with tempfile.TemporaryDirectory() as directory:
            out = os.path.join(directory, 'de.csv')
            log = os.path.join(directory, 'run.log')
            code, stdout, _ = self._run(['de', '--eps', '0.3', '--d', '1000', '--k', '10000', '--out', out,
                                         '--log-file', log])
            self.assertEqual(code, 0)
            self.assertIn('Wrote 1 trajectories', stdout)
            with open(out, 'rt', newline='') as file:
                rows = list(csv.reader(file))
            with open(log, 'rt') as file:
                self.assertIn('[DE] eps=0.3 D=1000', file.read())
        self.assertEqual(rows[0], ['eps', 'D', 'j', 'p_j'])
        trajectory = [row for row in rows[1:] if row[0] != 'summary']
        self.assertLess(float(trajectory[-1][3]), 0.01)
        summary = rows[-1]
        self.assertEqual(summary[:3], ['summary', '0.3', '1000'])
        x2, floor, f_prime_1, converged_at = summary[3:]
        self.assertAlmostEqual(float(x2), float(trajectory[-1][3]), delta=1e-3)
        self.assertTrue(0 < float(floor) < 0.01)
        self.assertGreater(float(f_prime_1), 1)
        self.assertLess(int(converged_at), len(trajectory))

    def test_flags_override_config_file(self):
        with tempfile.TemporaryDirectory() as directory:
            config = os.path.join(directory, 'cfg.json')
            out = os.path.join(directory, 'sim.csv')
            with open(config, 'wt') as file:
                json.dump({'mode': 'sim', 'n': 2000, 'k': 100, 'mk': 1.6, 'd': 50, 'init': 'known', 'trials': 5,
                           'out': out}, file)
            code, _, _ = self._run(['sim', '--config', config, '--trials', '2', '--jobs', '1',
                                    '--log-file', os.path.join(directory, 'run.log')])
            self.assertEqual(code, 0)
            with open(out, 'rt', newline='') as file:
                rows = list(csv.reader(file))
        self.assertEqual(len(rows), 3)
        self.assertEqual({row[6] for row in rows[1:]}, {'known'})

    def test_inconsistent_config_exits_with_two(self):
        with tempfile.TemporaryDirectory() as directory:
            out = os.path.join(directory, 'never.csv')
            code, _, stderr = self._run(['sweep', '--n', '2000', '--k', '100', '--mk', '1.3', '--d', '1000',
                                         '--out', out, '--log-file', os.path.join(directory, 'run.log')])
            self.assertFalse(os.path.exists(out))
        self.assertEqual(code, 2)
        self.assertIn('fewer than D', stderr)

    def test_unknown_mode(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                main(['plot'])
