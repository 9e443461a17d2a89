from freeedge.checks.check_base import Check
from freeedge.common.errors import ErrorCode
from freeedge.common.feedback import Severity


class EdgeContainment(Check):
    """Both computed support edges lie strictly inside the certified interval."""

    def inspect(self, certificate):
        if not certificate.edge_verified:
            self.create_finding(
                "support edges could not be computed; containment is unverified",
                ErrorCode.EDGE_UNVERIFIED,
                False,
            )
            return

        lo, hi = certificate.interval
        for report in (certificate.left, certificate.right):
            extent = report.extent
            inside = lo < extent < hi
            # outside the interval is only an error when the bound claims to hold
            severity = None if inside or not certificate.thm2_pass else Severity.ERROR
            self.create_finding(
                f"{report.side.value} edge {extent:.12g} ({report.mode.value}) is "
                f"{'inside' if inside else 'outside'} ({lo:.12g}, {hi:.12g})",
                ErrorCode.EDGE_OUTSIDE_INTERVAL,
                inside,
                severity=severity,
                edge=extent,
                error_bound=report.error_bound,
                mode=report.mode.value,
            )


class ConvolutionAtoms(Check):
    """Reports atoms of the row sum, where the density is not defined."""

    def inspect(self, certificate):
        for atom in certificate.atoms:
            self.create_finding(
                f"atom of mass {atom.mass:.6g} at {atom.location:.12g}",
                ErrorCode.CONVOLUTION_ATOM,
                True,
                location=atom.location,
                mass=atom.mass,
            )
