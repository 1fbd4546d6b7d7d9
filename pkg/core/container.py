"""
Dependency injection container for the application
Manages the creation and lifecycle of services and repositories
"""
import os
from dependency_injector import containers, providers
from config.settings import get_config
from repositories.checkpoint_repository import BinaryCheckpointRepository
from repositories.dataset_repository import FolderDatasetRepository
from services.data_service import DataService
from services.evaluation_service import EvaluationService
from services.model_service import ModelService
from services.training_service import TrainingService


class ApplicationContainer(containers.DeclarativeContainer):
    """Application container for dependency injection"""

    # Configuration
    config = providers.Configuration(default={"workers": 1})

    # Environment settings - in testing mode, re-read on every resolution
    if os.getenv('TESTING') == 'true':
        settings = providers.Factory(get_config)
    else:
        settings = providers.Singleton(get_config)

    # Repositories
    checkpoint_repository = providers.Singleton(BinaryCheckpointRepository)
    dataset_repository = providers.Factory(
        FolderDatasetRepository,
        extensions=settings.provided.IMAGE_EXTENSIONS,
    )

    # Services
    data_service = providers.Factory(
        DataService,
        dataset_repository=dataset_repository,
        workers=config.workers,
    )
    model_service = providers.Factory(
        ModelService,
        checkpoint_repository=checkpoint_repository,
    )
    training_service = providers.Factory(
        TrainingService,
        data_service=data_service,
        model_service=model_service,
    )
    evaluation_service = providers.Factory(EvaluationService)


# Global container instance
container = ApplicationContainer()
