"""
Centralized configuration management
Environment-driven settings shared by every command
"""
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _env_flag(name: str, default: str = 'false') -> bool:
    return os.environ.get(name, default).lower() in ['true', '1', 't']


class BaseConfig:
    """Base configuration with common settings"""

    DEBUG = False
    TESTING = False

    # Reproducibility
    SEED = int(os.environ.get('MAMAPP_SEED', 42))

    # Data pipeline
    WORKERS = int(os.environ.get('MAMAPP_WORKERS', 1))
    IMAGE_EXTENSIONS = ('.jpg', '.jpeg', '.png')

    # Output Configuration
    OUTPUT_DIR = os.environ.get('MAMAPP_OUTPUT_DIR', 'runs')

    # Numeric checks after every op (slow)
    DEBUG_NUMERICS = _env_flag('MAMAPP_DEBUG_NUMERICS')

    # Logging Configuration
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    LOG_FILE = os.environ.get('LOG_FILE', 'mamapp.log')

    # Application Configuration
    APP_NAME = os.environ.get('APP_NAME', 'Mam-App')
    APP_VERSION = os.environ.get('APP_VERSION', '1.0.0')

    # Published parameter count of the reference model (0.051M)
    REFERENCE_PARAM_COUNT = 51000


class DevelopmentConfig(BaseConfig):
    """Development configuration"""
    DEBUG = True
    LOG_LEVEL = 'DEBUG'


class ProductionConfig(BaseConfig):
    """Production configuration"""
    DEBUG = False
    LOG_LEVEL = 'WARNING'


class TestingConfig(BaseConfig):
    """Testing configuration"""
    TESTING = True
    DEBUG = True
    WORKERS = 1
    LOG_LEVEL = 'CRITICAL'  # Suppress logs during testing
    DEBUG_NUMERICS = True


def get_config() -> BaseConfig:
    """
    Get configuration based on environment
    """
    env = os.environ.get('MAMAPP_ENV', 'development').lower()

    if env == 'production':
        return ProductionConfig()
    elif env == 'testing':
        return TestingConfig()
    else:
        return DevelopmentConfig()


def validate_config(config: BaseConfig) -> bool:
    """
    Validate that environment settings are usable
    """
    problems = []
    if config.WORKERS < 1:
        problems.append(f"MAMAPP_WORKERS must be >= 1, got {config.WORKERS}")
    if config.SEED < 0:
        problems.append(f"MAMAPP_SEED must be non-negative, got {config.SEED}")

    if problems:
        raise ValueError(f"Invalid environment settings: {problems}")

    return True
