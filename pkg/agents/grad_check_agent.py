"""
Gradient Check Agent Module
Compares the analytic loss gradient with central differences over the
coefficient corners of both stages
"""

from dataclasses import replace
from typing import Any, Dict, List, Optional

from temporal_lab.errors import LabError, NumericError
from temporal_lab.tnce_loss import STAGE_A, STAGE_B, gradient_check
from .base_agent import BaseAgent

# (alpha_st, alpha_ct, alpha_so, alpha_co)
ALPHA_CORNERS = ((0, 0, 0, 0), (1, 0, 1, 0), (0, 1, 0, 1), (1, 1, 1, 1))


class GradCheckAgent(BaseAgent):
    """Agent that fails loudly when the analytic gradient disagrees with finite differences"""

    def __init__(self, config: Any, on_result=None):
        super().__init__(config)
        self.on_result = on_result

    def initialize(self) -> bool:
        try:
            self.config.loss.validate()
            self.initialized = True
            return True
        except LabError as e:
            self._fail("Invalid loss configuration", e)
            return False

    def process(self, data: Dict[str, Any]) -> Optional[List[Dict[str, Any]]]:
        """
        Check every (corner, stage) configuration

        Stage B corners are checked with both appendix_a5_form values and
        report the worse of the two.

        Args:
            data: {'corrupt': float, 'h': float, 'tolerance': float, 'coords': int, 'seed': int}

        Returns:
            One result dictionary per configuration, or None when a check
            fails (last_error is a NumericError)
        """
        if not self.initialized:
            return self._not_initialized()

        corrupt = float(data.get('corrupt', 0.0))
        seed = int(data.get('seed', self.config.seed))
        rows = []
        try:
            for stage in (STAGE_A, STAGE_B):
                for corner in ALPHA_CORNERS:
                    results = []
                    for a5_form in ((False, True) if stage == STAGE_B else (False,)):
                        coeffs = replace(self.config.loss.with_alphas(*corner), appendix_a5_form=a5_form)
                        results.append(gradient_check(
                            stage, coeffs, seed=seed,
                            n_coords=int(data.get('coords', 20)),
                            h=float(data.get('h', 1e-6)),
                            tolerance=float(data.get('tolerance', 1e-5)),
                            corrupt=corrupt,
                        ))
                    worst = max(results, key=lambda r: r.max_relative_error)
                    row = dict(worst.to_dict(), alphas=list(corner),
                               a5_forms_checked=len(results))
                    rows.append(row)
                    self.logger.info(f"Stage {stage} alphas {corner}: max relative error "
                                     f"{worst.max_relative_error:.3e} ({'ok' if worst.passed else 'FAIL'})")
                    if self.on_result:
                        self.on_result(row)

            failed = [r for r in rows if not r['passed']]
            if failed:
                worst = max(failed, key=lambda r: r['max_relative_error'])
                raise NumericError(
                    f"{len(failed)} of {len(rows)} gradient checks failed; worst stage {worst['stage']} "
                    f"alphas {worst['alphas']} coordinate {worst['worst_coordinate']} "
                    f"relative error {worst['max_relative_error']:.3e}"
                )
            return rows

        except LabError as e:
            return self._fail("Gradient check failed", e)

    def shutdown(self):
        self.logger.info("Grad-check agent shutdown")
