import math
import os
import tempfile
import unittest

import numpy as np
import numpy.testing as npt

from flatforge.algebra.loop_algebra import DecompositionRule
from flatforge.data.config import RunConfig, apply_overrides, load_config, parse_config, parse_real, serialize_config
from flatforge.errors import ConfigError

CLIFFORD_TEXT = """
# golden torus
n = 2
d = 0
rule = simple
initial = clifford(0.6, 0.8)
grid.lower = 0 0
grid.upper = 2*pi 2*pi
grid.spacing = pi/50
period = 2*pi 0
period = pi/2 0
"""

EXPLICIT_TEXT = """
n = 2
d = 1
[matrix X1]
rows = 4
cols = 4
0 0 1 2
0 0 3 4
-1 -3 0 0
-2 -4 0 0
"""


class TestParseReal(unittest.TestCase):
    def test_plain_and_pi_multiples(self):
        self.assertEqual(parse_real("0.25"), 0.25)
        self.assertEqual(parse_real("1e-3"), 1e-3)
        self.assertEqual(parse_real("pi"), math.pi)
        self.assertEqual(parse_real("2*pi"), 2 * math.pi)
        self.assertEqual(parse_real("pi/50"), math.pi / 50)
        self.assertEqual(parse_real("-3*pi/4"), -3 * math.pi / 4)

    def test_garbage(self):
        for text in ("tau", "2pi", "pi/0", ""):
            with self.assertRaises(ConfigError):
                parse_real(text)


class TestParseConfig(unittest.TestCase):
    def test_clifford_config(self):
        cfg = parse_config(CLIFFORD_TEXT)
        self.assertEqual(cfg.n, 2)
        self.assertIs(cfg.rule, DecompositionRule.SIMPLE)
        self.assertEqual(cfg.clifford_params(), (0.6, 0.8))
        self.assertEqual(cfg.grid_upper, (2 * math.pi, 2 * math.pi))
        self.assertEqual(cfg.grid_spacing, math.pi / 50)
        self.assertEqual(cfg.periods, ((2 * math.pi, 0.0), (math.pi / 2, 0.0)))

    def test_defaults(self):
        cfg = parse_config("n = 3\n")
        self.assertEqual(cfg.grid_lower, (0.0, 0.0, 0.0))
        self.assertEqual(cfg.grid_upper, (1.0, 1.0, 1.0))
        self.assertEqual(cfg.initial, "random")
        self.assertIsNone(cfg.clifford_params())

    def test_matrix_sections(self):
        cfg = parse_config(EXPLICIT_TEXT)
        self.assertEqual(cfg.initial, "explicit")
        X = cfg.explicit_element()
        self.assertEqual((X.lo, X.hi), (1, 1))
        npt.assert_array_equal(X.coefficient(1)[:2, 2:], np.array([[1.0, 2.0], [3.0, 4.0]]))

    def test_round_trip(self):
        for text in (CLIFFORD_TEXT, EXPLICIT_TEXT, "n = 2\nscale = 0.5\ncolumn = 4\nworkers = 3\n"):
            cfg = parse_config(text)
            self.assertEqual(parse_config(serialize_config(cfg)), cfg)

    def test_load_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.cfg")
            with open(path, "w") as handle:
                handle.write(CLIFFORD_TEXT)
            self.assertEqual(load_config(path), parse_config(CLIFFORD_TEXT))


class TestConfigErrors(unittest.TestCase):
    def assert_error(self, text, line, field):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(text)
        self.assertEqual(ctx.exception.line, line)
        self.assertEqual(ctx.exception.field, field)
        return ctx.exception

    def test_field_level_errors_carry_the_line(self):
        self.assert_error("n = 2\nd = -1\n", 2, "d")
        self.assert_error("n = 2\n\nh = 0\n", 3, "h")
        self.assert_error("grid.spacing = -0.1\n", 1, "grid.spacing")
        self.assert_error("n = 2\nperiod = 1 2 3\n", 2, "period")
        self.assert_error("n = 2\ncolumn = 2\n", 2, "column")

    def test_syntax_errors(self):
        self.assert_error("n = two\n", 1, "n")
        self.assert_error("n = 2\nbogus = 1\n", 2, "bogus")
        self.assert_error("n = 2\nn = 3\n", 2, "n")
        self.assert_error("n = 2\nrule = sideways\n", 2, "rule")
        self.assert_error("just words\n", 1, None)
        self.assert_error("[vector v]\n", 1, None)

    def test_message_names_line_and_field(self):
        error = self.assert_error("n = 2\nd = -1\n", 2, "d")
        self.assertTrue(str(error).startswith("line 2, field 'd': "))

    def test_bad_initial_conditions(self):
        self.assert_error("initial = clifford(0.6, 0.6)\n", 1, "initial")
        self.assert_error("initial = sphere\n", 1, "initial")
        self.assert_error("n = 3\ninitial = clifford(0.6, 0.8)\n", 1, "n")

    def test_bad_matrices(self):
        self.assert_error("[matrix X1]\nrows = 4\ncols = 4\n1 2 3 4\n", 1, "matrix")
        self.assert_error("d = 0\n[matrix X-1]\nrows = 4\ncols = 4\n" + "0 0 0 0\n" * 4, None, "matrix")
        with self.assertRaises(ConfigError):
            parse_config("[matrix X1]\nrows = 4\ncols = 4\n" + "1 1 1 1\n" * 4).explicit_element()

    def test_direct_construction_is_checked(self):
        with self.assertRaises(ConfigError):
            RunConfig(n=2, grid_lower=(0.0,))


class TestOverrides(unittest.TestCase):
    def test_overrides(self):
        cfg = parse_config(CLIFFORD_TEXT)
        self.assertIs(apply_overrides(cfg, seed=None), cfg)
        changed = apply_overrides(cfg, h=1e-2, workers=2, out=None)
        self.assertEqual((changed.h, changed.workers, changed.out), (1e-2, 2, cfg.out))
        with self.assertRaises(ConfigError):
            apply_overrides(cfg, h=-1.0)


if __name__ == "__main__":
    unittest.main()
