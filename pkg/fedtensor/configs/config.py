"""
Configuration module for the federated tensor runtime
"""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
env_path = Path(__file__).parent.parent.parent / '.env'
load_dotenv(env_path)

# Keys whose environment value could not be parsed; reported by Config.validate()
UNPARSED_KEYS = []


def _env_number(name, default, cast, unparsed=UNPARSED_KEYS):
    """Parsed value of name, or default when unset, empty or unparseable"""
    value = os.getenv(name)
    if value is None or value.strip() == "":
        return default
    try:
        return cast(value)
    except ValueError:
        unparsed.append(name)
        return default


class Config:
    """Configuration settings for evaluation, factorization and simulation"""

    # Reproducibility
    SEED = _env_number("FEDTENSOR_SEED", None, int)  # overrides --seed when set
    RNG_ALGORITHM = "numpy.Philox"  # recorded in output metadata

    # Logging
    LOG_LEVEL = os.getenv("FEDTENSOR_LOG_LEVEL", "WARNING")

    # Client-parallel execution (1 = sequential)
    MAX_WORKERS = _env_number("FEDTENSOR_MAX_WORKERS", 1, int)

    # Numerical tolerances
    CONSISTENCY_TOL = _env_number("FEDTENSOR_CONSISTENCY_TOL", 1e-12, float)
    PLAN_TOL = _env_number("FEDTENSOR_PLAN_TOL", 1e-10, float)
    SOLVE_PIVOT_TOL = _env_number("FEDTENSOR_SOLVE_PIVOT_TOL", 1e-12, float)

    # Property suite size for `selfcheck`
    SELFCHECK_TRIALS = _env_number("FEDTENSOR_SELFCHECK_TRIALS", 25, int)

    # Paths
    CORPUS_DIR = Path(__file__).parent.parent / "corpus"

    @classmethod
    def resolve_seed(cls, cli_seed):
        """Environment seed wins over the command-line seed"""
        return cls.SEED if cls.SEED is not None else cli_seed

    @classmethod
    def validate(cls):
        """Validate configuration values"""
        invalid = list(UNPARSED_KEYS)
        if cls.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            invalid.append("FEDTENSOR_LOG_LEVEL")
        if cls.MAX_WORKERS < 1:
            invalid.append("FEDTENSOR_MAX_WORKERS")
        for key, value in (("FEDTENSOR_CONSISTENCY_TOL", cls.CONSISTENCY_TOL),
                           ("FEDTENSOR_PLAN_TOL", cls.PLAN_TOL),
                           ("FEDTENSOR_SOLVE_PIVOT_TOL", cls.SOLVE_PIVOT_TOL)):
            if not value > 0:
                invalid.append(key)
        if cls.SELFCHECK_TRIALS < 1:
            invalid.append("FEDTENSOR_SELFCHECK_TRIALS")
        if invalid:
            raise ValueError(f"Invalid configuration: {', '.join(invalid)}")
        return True
