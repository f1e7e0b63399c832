from .archive import Archive, ArchiveError, load_archive, save_archive
from .config import ConfigError, DatasetSpec, ExperimentConfig, SearchSpec, build_dataset
from .main import EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, build_parser, main, tau_row

__all__ = [
    "Archive",
    "ArchiveError",
    "load_archive",
    "save_archive",
    "ConfigError",
    "DatasetSpec",
    "ExperimentConfig",
    "SearchSpec",
    "build_dataset",
    "EXIT_INFEASIBLE",
    "EXIT_OK",
    "EXIT_USAGE",
    "build_parser",
    "main",
    "tau_row",
]
