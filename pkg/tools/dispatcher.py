"""
tools/dispatcher.py - Runner selection and dispatch
Routes a validated configuration to the protocol or one of the baselines
"""
import logging
from typing import Callable, Dict, List

from config import SimConfig
from flows.baseline_flow import run_centralized, run_fedavg, run_single_device
from flows.metrics import MetricsLog
from flows.protocol_flow import run_protocol
from tools.partitioning import FederatedData

logger = logging.getLogger(__name__)

Runner = Callable[[SimConfig, FederatedData], MetricsLog]


class RunnerDispatcher:
    """
    Maps runner names to the flows that execute them
    Every runner receives the same configuration and prepared data, and returns a MetricsLog
    """

    def __init__(self):
        self.runners: Dict[str, Runner] = {
            "protocol": lambda cfg, data: run_protocol(cfg, cfg.schedule, data, cfg.seed),
            "fedavg": lambda cfg, data: run_fedavg(cfg, cfg.schedule, data, cfg.seed),
            "single": lambda cfg, data: run_single_device(cfg, data, cfg.seed),
            "centralized": lambda cfg, data: run_centralized(cfg, data, cfg.seed),
        }

    def available(self) -> List[str]:
        return sorted(self.runners)

    def dispatch(self, cfg: SimConfig, data: FederatedData) -> MetricsLog:
        """
        Run the configured runner

        Args:
            cfg (SimConfig): validated experiment configuration
            data (FederatedData): prepared client partitions and test set

        Returns:
            MetricsLog: the run's records and summary
        """
        runner = self.runners.get(cfg.runner)
        if runner is None:
            raise KeyError(f"unknown runner '{cfg.runner}'; available: {', '.join(self.available())}")
        logger.info("Dispatching runner '%s' (seed %d)", cfg.runner, cfg.seed)
        return runner(cfg, data)


# Factory function for easy instantiation
def create_runner_dispatcher() -> RunnerDispatcher:
    """Factory function to create and return a RunnerDispatcher instance"""
    return RunnerDispatcher()
