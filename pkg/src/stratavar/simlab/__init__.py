"""Simulation studies driven by flat config files, written as CSV tables."""
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (
    run,
    run_fig1,
    run_fig2,
    run_fig3,
    run_fig4,
    run_rankbound,
)
from .table import ResultTable
from ..kernels import read_embeddings_csv


def ingest_embeddings(path, header: bool = False):
    """Read an embedding CSV; ids follow row order."""
    return read_embeddings_csv(path, header=header)
