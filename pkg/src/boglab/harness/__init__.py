from .config import ConfigError, ExperimentConfig, from_dict, parse_config
from .pipeline import RunRecord, run_pipeline
from .sweep import fit_powerlaw, sweep

__all__ = ["ConfigError", "ExperimentConfig", "RunRecord", "fit_powerlaw", "from_dict",
           "parse_config", "run_pipeline", "sweep"]
