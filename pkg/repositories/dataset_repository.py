"""
Repository pattern for image-folder datasets
Separates filesystem access and image decoding from splitting and batching logic
"""
import logging
import os
from abc import ABC, abstractmethod
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

from models.dataset import DatasetIndex, Sample
from utils.errors import IngestionError
from utils.run_logger import get_run_logger

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = ('.jpg', '.jpeg', '.png')
MANIFEST_COLUMNS = ['path', 'class', 'split']


class DatasetRepositoryInterface(ABC):
    """Interface for dataset access"""

    @abstractmethod
    def index(self, root: str) -> DatasetIndex:
        pass

    @abstractmethod
    def load_image(self, path: str, size: Tuple[int, int]) -> np.ndarray:
        pass

    @abstractmethod
    def write_manifest(self, index: DatasetIndex, path: str) -> None:
        pass


class FolderDatasetRepository(DatasetRepositoryInterface):
    """root/<class_name>/*.{jpg,jpeg,png} layout"""

    def __init__(self, extensions: Sequence[str] = IMAGE_EXTENSIONS):
        self.extensions = tuple(ext.lower() for ext in extensions)

    def _is_decodable(self, path: str) -> Tuple[bool, str]:
        try:
            with Image.open(path) as img:
                img.verify()
            return True, ''
        except (UnidentifiedImageError, OSError, SyntaxError) as e:
            return False, str(e) or type(e).__name__

    def index(self, root: str) -> DatasetIndex:
        """
        Index every decodable image under each class directory.

        :param root: dataset root with one sub-directory per class
        :return: DatasetIndex with lexicographic class ids and path order, no split assigned
        """
        if not os.path.isdir(root):
            raise IngestionError(root, "dataset root does not exist or is not a directory")
        try:
            entries = sorted(os.listdir(root))
        except OSError as e:
            raise IngestionError(root, f"cannot read dataset root: {e}")

        classes = [name for name in entries if os.path.isdir(os.path.join(root, name))]
        if len(classes) < 2:
            raise IngestionError(root, f"need at least 2 class directories, found {len(classes)}")

        samples: List[Sample] = []
        for class_id, name in enumerate(classes):
            class_dir = os.path.join(root, name)
            found = 0
            for file_name in sorted(os.listdir(class_dir)):
                path = os.path.join(class_dir, file_name)
                if not os.path.isfile(path) or not file_name.lower().endswith(self.extensions):
                    continue
                ok, reason = self._is_decodable(path)
                if not ok:
                    logger.warning("Skipping undecodable image %s: %s", path, reason)
                    get_run_logger().log_skipped_file(path, reason)
                    continue
                samples.append(Sample(path=path, class_id=class_id))
                found += 1
            if found == 0:
                raise IngestionError(class_dir, "class directory contains no decodable PNG/JPEG images")

        return DatasetIndex(root=root, classes=classes, samples=samples)

    def load_image(self, path: str, size: Tuple[int, int] = (256, 256)) -> np.ndarray:
        """
        Decode, convert to RGB, resize bilinearly and scale to [0, 1].

        :return: float32 array [3, H, W]
        """
        try:
            with Image.open(path) as img:
                rgb = img.convert('RGB')
                height, width = size
                if rgb.size != (width, height):
                    rgb = rgb.resize((width, height), resample=Image.Resampling.BILINEAR)
                array = np.asarray(rgb, dtype=np.float32) / 255.0
        except (UnidentifiedImageError, OSError) as e:
            raise IngestionError(path, f"cannot decode image: {e}")
        return np.ascontiguousarray(array.transpose(2, 0, 1))

    def write_manifest(self, index: DatasetIndex, path: str) -> None:
        frame = pd.DataFrame(
            [[s.path, index.classes[s.class_id], tag or ''] for s, tag in zip(index.samples, index.split_assignment)],
            columns=MANIFEST_COLUMNS,
        )
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        frame.to_csv(path, index=False)

    def read_manifest(self, path: str) -> DatasetIndex:
        """Rebuild a split index from a manifest written by write_manifest."""
        try:
            frame = pd.read_csv(path, keep_default_na=False)
        except (OSError, pd.errors.ParserError) as e:
            raise IngestionError(path, f"cannot read split manifest: {e}")
        missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
        if missing:
            raise IngestionError(path, f"manifest lacks columns {missing}")
        classes = sorted(frame['class'].unique().tolist())
        lookup = {name: i for i, name in enumerate(classes)}
        samples = [Sample(path=p, class_id=lookup[c]) for p, c in zip(frame['path'], frame['class'])]
        tags = [t if t else None for t in frame['split']]
        root = os.path.commonpath([os.path.dirname(os.path.dirname(s.path)) for s in samples]) if samples else ''
        return DatasetIndex(root=root, classes=classes, samples=samples, split_assignment=tags)
