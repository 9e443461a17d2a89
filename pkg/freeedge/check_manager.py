import importlib
import inspect
import pkgutil
from collections.abc import Sequence

import freeedge.checks
from freeedge.checks.check_base import Check
from freeedge.common.errors import UsageError
from freeedge.common.logging import get_logger

logger = get_logger("check_manager")


class CheckManager:
    """Discovers and instantiates the Check subclasses in freeedge.checks."""

    @staticmethod
    def load_checks() -> list[Check]:
        """Return one instance of every check, ordered by module then class name."""
        checks: list[Check] = []
        discovered: set[type[Check]] = set()

        for module in CheckManager._import_submodules(freeedge.checks):
            for _, obj in inspect.getmembers(module, inspect.isclass):
                if (
                    issubclass(obj, Check)
                    and obj is not Check
                    and not inspect.isabstract(obj)
                    and obj not in discovered
                ):
                    checks.append(obj())
                    discovered.add(obj)

        logger.debug(f"Discovered checks: {[c.__symbolic_name__ for c in checks]}")
        return checks

    @staticmethod
    def select(names: Sequence[str] | None = None) -> list[Check]:
        """
        Return the checks named in `names`, or all of them.

        The order is discovery order, independent of the order of `names`.
        Raises UsageError when a name matches no check.
        """
        checks = CheckManager.load_checks()
        if names is None or "all" in names:
            return checks

        known = {c.__symbolic_name__ for c in checks}
        unknown = [name for name in names if name not in known]
        if unknown:
            raise UsageError(
                f"unknown check(s): {', '.join(unknown)}; available: {', '.join(sorted(known))}"
            )
        return [c for c in checks if c.__symbolic_name__ in names]

    @staticmethod
    def _import_submodules(package) -> list:
        modules = []
        for _finder, name, ispkg in pkgutil.iter_modules(package.__path__, package.__name__ + "."):
            module = importlib.import_module(name)
            modules.append(module)
            if ispkg:
                modules.extend(CheckManager._import_submodules(module))
        return modules
