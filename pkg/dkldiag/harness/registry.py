import inspect
import logging
from typing import Dict, List, Optional, Type

from pydantic import ValidationError

from .config import ExperimentConfig
from .runners import BaseRunner, ExactGpRunner, ExperimentError, HmcRunner, NnRunner, SgldRunner, SvgpRunner

logger = logging.getLogger(__name__)

__all__ = ["ExperimentRunnerRegistry"]

BUILTIN_RUNNERS = (ExactGpRunner, SvgpRunner, NnRunner, HmcRunner, SgldRunner)


class ExperimentRunnerRegistry:
    """
    Registry mapping model kinds to the runner classes that train them.

    Built-in runners are registered on first use; custom runners can be added
    with ``register_runner``.
    """

    _runners: Dict[str, Type[BaseRunner]] = {}
    _initialized = False

    @classmethod
    def _discover_runners(cls) -> None:
        """Register every built-in runner under each model kind it handles."""
        if cls._initialized:
            return

        for runner_class in BUILTIN_RUNNERS:
            for kind in runner_class.kinds:
                cls._runners.setdefault(kind, runner_class)
                logger.debug(f"Registered runner {runner_class.__name__} for {kind}")

        cls._initialized = True
        logger.debug(f"Runner registry initialized with kinds: {list(cls._runners.keys())}")

    @classmethod
    def register_runner(cls, kind: str, runner_class: Type[BaseRunner]) -> None:
        """
        Manually register a runner for a model kind.

        Args:
            kind: Model kind the runner handles
            runner_class: Runner class
        """
        if not (inspect.isclass(runner_class) and issubclass(runner_class, BaseRunner)):
            raise ValueError(f"Runner class {runner_class} must inherit from BaseRunner")
        cls._discover_runners()
        cls._runners[kind] = runner_class
        logger.info(f"Manually registered runner for {kind}: {runner_class.__name__}")

    @classmethod
    def get_available_kinds(cls) -> List[str]:
        cls._discover_runners()
        return list(cls._runners.keys())

    @classmethod
    def get_runner(cls, kind: str) -> Optional[Type[BaseRunner]]:
        cls._discover_runners()
        return cls._runners.get(kind)

    @classmethod
    def create_runner(cls, kind: str, config: Optional[ExperimentConfig] = None, **kwargs) -> BaseRunner:
        """
        Instantiate the runner for ``kind``.

        Args:
            kind: Model kind
            config: Base experiment config; its ``model_kind`` is replaced by ``kind``
            **kwargs: Config field overrides; names that are not config fields are ignored

        Raises:
            ExperimentError: If no runner handles ``kind`` or the overridden config is invalid
        """
        runner_class = cls.get_runner(kind)
        if runner_class is None:
            logger.error(f"No runner registered for model kind '{kind}'")
            raise ExperimentError(f"No runner registered for model kind '{kind}'")

        config_fields = ExperimentConfig.model_fields.keys()
        filtered_kwargs = {k: v for k, v in kwargs.items() if k in config_fields}
        base = (config or ExperimentConfig()).model_dump()
        try:
            config = ExperimentConfig.model_validate({**base, "model_kind": kind, **filtered_kwargs})
        except ValidationError as e:
            logger.error(f"Invalid config for {kind}: {e}")
            raise ExperimentError(f"Invalid config for model kind '{kind}': {e}") from e
        runner = runner_class(config=config)
        logger.debug(f"Created runner {runner_class.__name__} for {kind}")
        return runner
