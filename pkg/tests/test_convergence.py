import io
import math

import pytest

from spechom.convergence import convergence_study, write_convergence_csv
from spechom.lattice import Topology, builtin_checkerboard4, homogeneous_environment
from spechom.montecarlo import parse_scaling_rule

MU_RULE = parse_scaling_rule("250*R^-1.5", "R")
L_RULE = parse_scaling_rule("R/3", "R")


class TestConvergenceStudy:
    def test_homogeneous_errors_below_floor(self):
        cell = homogeneous_environment((4, 4), value=2.0)
        result = convergence_study(cell, (1, 2), (4, 6), MU_RULE, L_RULE)
        assert result.ahom == pytest.approx(2.0, rel=1e-14)
        for p in result.points:
            assert p.abs_error < 1e-12
        for fit in result.fits.values():
            assert math.isnan(fit.slope)
            assert fit.npoints == 0

    def test_reference_cell_small_run(self):
        cell = builtin_checkerboard4()
        result = convergence_study(cell, (1, 2), (6, 9, 12), MU_RULE, L_RULE)
        k1 = [p for p in result.points if p.k == 1]
        assert [p.cells for p in k1] == [6, 9, 12]
        assert [p.side for p in k1] == [24, 36, 48]
        errors = [p.abs_error for p in k1]
        assert errors[0] > errors[-1] > 0
        assert all(p.max_residual <= 1e-12 for p in result.points)
        # Order 2 improves on order 1 at every size here.
        for c in (6, 9, 12):
            e1 = next(p.abs_error for p in result.points if p.k == 1 and p.cells == c)
            e2 = next(p.abs_error for p in result.points if p.k == 2 and p.cells == c)
            assert e2 < e1

    def test_validation(self):
        cell = builtin_checkerboard4()
        box = homogeneous_environment((5, 5), Topology.BOX)
        with pytest.raises(ValueError, match="periodic"):
            convergence_study(box, (1,), (4,), MU_RULE, L_RULE)
        with pytest.raises(ValueError, match="ascending"):
            convergence_study(cell, (1,), (8, 4), MU_RULE, L_RULE)
        with pytest.raises(ValueError, match="orders"):
            convergence_study(cell, (0,), (4,), MU_RULE, L_RULE)
        wide = homogeneous_environment((2, 4))
        with pytest.raises(ValueError, match="equal extents"):
            convergence_study(wide, (1,), (4,), MU_RULE, L_RULE)

    def test_csv_deterministic(self):
        cell = builtin_checkerboard4()
        texts = []
        for _ in range(2):
            result = convergence_study(cell, (1,), (4, 6), MU_RULE, L_RULE)
            buf = io.StringIO()
            write_convergence_csv(result, buf, {"r_list": "4,6"})
            texts.append(buf.getvalue())
        assert texts[0] == texts[1]
        header = [l for l in texts[0].splitlines() if not l.startswith("#")][0]
        assert header == "k,R,side,mu,L,estimate,abs_error,max_residual"
        assert "# fit k=1 slope = " in texts[0]
