import os
import logging
from pathlib import Path
from dotenv import load_dotenv

# Cargar variables de entorno desde .env
load_dotenv()


def _env_flag(name: str, default: str = "false") -> bool:
    """Interpreta 1/true/yes/on como verdadero."""
    return os.getenv(name, default).strip().lower() in {"1", "true", "yes", "on"}


# --- Rutas base ---
BASE_DIR: Path = Path(__file__).resolve().parent.parent
DATA_DIR: Path = Path(os.getenv("TSPLAB_DATA_DIR", str(BASE_DIR / "data")))
LOG_DIR: Path = DATA_DIR / "logs"
REPORTS_DIR: Path = DATA_DIR / "reports"

# Crear directorios si no existen
DATA_DIR.mkdir(parents=True, exist_ok=True)
LOG_DIR.mkdir(parents=True, exist_ok=True)

# --- Tolerancias numericas ---
LP_TOLERANCE: float = float(os.getenv("LP_TOLERANCE", "1e-9"))
CUT_VIOLATION_TOL: float = float(os.getenv("CUT_VIOLATION_TOL", "1e-6"))
COMB_VIOLATION_TOL: float = float(os.getenv("COMB_VIOLATION_TOL", "1e-6"))
GEOMETRY_TOL: float = float(os.getenv("GEOMETRY_TOL", "1e-9"))
MAX_SIMPLEX_ITERATIONS: int = int(os.getenv("MAX_SIMPLEX_ITERATIONS", "50000"))

# --- Solvers exactos ---
DP_MAX_N: int = int(os.getenv("DP_MAX_N", "20"))
EXACT_LIMIT: int = int(os.getenv("EXACT_LIMIT", "15"))

# --- Experimentos ---
BOOTSTRAP_RESAMPLES: int = int(os.getenv("BOOTSTRAP_RESAMPLES", "1000"))
RUN_PRESETS_FILE: Path = Path(__file__).resolve().parent / "run_presets.yaml"
ACCEPTANCE_MODE: bool = _env_flag("TSPLAB_ACCEPTANCE")

# --- Servidor del laboratorio ---
HOST: str = os.getenv("HOST", "127.0.0.1")
PORT: int = int(os.getenv("PORT", "8000"))
RELOAD: bool = _env_flag("RELOAD")

# --- Logging ---
LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE: Path = LOG_DIR / "tsplab.log"


def setup_logging() -> logging.Logger:
    """Configura logging para consola y archivo."""
    logger = logging.getLogger("tsplab")
    logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))
    logger.propagate = False

    # Evitar handlers duplicados al recargar el modulo.
    if logger.handlers:
        return logger

    formatter = logging.Formatter(
        "[%(asctime)s] %(levelname)s %(name)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S"
    )

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    try:
        file_handler = logging.FileHandler(str(LOG_FILE), encoding="utf-8")
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
    except Exception as e:
        logger.warning(f"No se pudo crear archivo de log: {e}")

    return logger


# Inicializar logger global
logger = setup_logging()
