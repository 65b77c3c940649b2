import logging
import os
from typing import Optional

from dotenv import find_dotenv, load_dotenv

logger = logging.getLogger("porostab")


def load_env(env_file: Optional[str] = None) -> bool:
    """Load a .env file (POROSTAB_ENV_FILE, or the nearest .env) using python-dotenv"""
    env_file_path = env_file or os.getenv("POROSTAB_ENV_FILE") or find_dotenv(usecwd=True)
    if not env_file_path:
        logger.debug("No .env file found")
        return False
    loading_mode = os.getenv("LOADING_MODE_FOR_ENV_VARS") or "no-override"
    if loading_mode == "override":
        logger.info("Loading env from %s, which may override existing environment variables", env_file_path)
        return load_dotenv(env_file_path, override=True)
    logger.info("Loading env from %s, but not overriding existing environment variables", env_file_path)
    return load_dotenv(env_file_path, override=False)
