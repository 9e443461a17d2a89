from freeedge.checks.check_base import Check
from freeedge.common.errors import ErrorCode
from freeedge.numerics.superconv import (
    D_RATIO_THRESHOLD,
    NORM_MARGIN_THRESHOLD,
    THEOREM_ONE_THRESHOLD,
)


class TheoremOneRatio(Check):
    """Finite-n hypothesis T_n / v_n^(3/2) < 2^-12."""

    def inspect(self, certificate):
        ratio = certificate.thm1_ratio
        if certificate.thm1_pass:
            message = f"T_n / v_n^(3/2) = {ratio:.6g} is below 2^-12"
        else:
            message = f"T_n / v_n^(3/2) = {ratio:.6g} is not below 2^-12"
        self.create_finding(
            message,
            ErrorCode.THM1_RATIO,
            certificate.thm1_pass,
            ratio=ratio,
            threshold=THEOREM_ONE_THRESHOLD,
        )


class TheoremTwoHypotheses(Check):
    """Finite-n hypotheses m_n sqrt(v_n) > 4 and D_n / v_n^(3/2) <= 1/8."""

    def inspect(self, certificate):
        margin = certificate.norm_margin
        margin_ok = margin > NORM_MARGIN_THRESHOLD
        self.create_finding(
            f"m_n sqrt(v_n) = {margin:.6g} {'exceeds' if margin_ok else 'does not exceed'} 4",
            ErrorCode.THM2_NORM_MARGIN,
            margin_ok,
            value=margin,
            threshold=NORM_MARGIN_THRESHOLD,
        )

        ratio = certificate.d_ratio
        ratio_ok = ratio <= D_RATIO_THRESHOLD
        self.create_finding(
            f"D_n / v_n^(3/2) = {ratio:.6g} {'is within' if ratio_ok else 'exceeds'} 1/8",
            ErrorCode.THM2_D_RATIO,
            ratio_ok,
            value=ratio,
            threshold=D_RATIO_THRESHOLD,
        )
