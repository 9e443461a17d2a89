from freeedge.checks.check_base import Check
from freeedge.common.errors import ErrorCode


class KernelEstimates(Check):
    """Worst margins of |K_n - 1/z - v_n z| <= D_n z^2 and its derivative bound."""

    def inspect(self, certificate):
        report = certificate.k_estimate
        self.create_finding(
            f"value estimate holds at {report.samples} points, "
            f"worst margin {report.worst_value_margin:.6g} at z = {report.worst_value_z:.6g}",
            ErrorCode.KEST_VALUE_MARGIN,
            report.worst_value_margin >= 0.0,
            margin=report.worst_value_margin,
            z=report.worst_value_z,
        )
        self.create_finding(
            f"derivative estimate holds at {report.samples} points, "
            f"worst margin {report.worst_derivative_margin:.6g} "
            f"at z = {report.worst_derivative_z:.6g}",
            ErrorCode.KEST_DERIVATIVE_MARGIN,
            report.worst_derivative_margin >= 0.0,
            margin=report.worst_derivative_margin,
            z=report.worst_derivative_z,
        )
