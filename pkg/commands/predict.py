"""
predict command: class name and softmax distribution for one image
"""
import argparse

import numpy as np

from core.container import container
from models.mam_app import predict_proba
from nn.tensor import Tensor
from services.data_service import normalize


def register(subparsers) -> None:
    parser = subparsers.add_parser('predict', help='Classify a single image')
    parser.add_argument('--ckpt', required=True)
    parser.add_argument('--image', required=True)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    loaded = container.model_service().load_checkpoint(args.ckpt)
    config = loaded.config
    image = container.data_service().load_and_preprocess(args.image, config.image_hw[0])
    image = normalize(image, config.norm_mean, config.norm_std)

    probabilities = predict_proba(loaded.model, Tensor(image[None]))[0]
    names = config.class_names or [str(i) for i in range(config.num_classes)]
    best = int(np.argmax(probabilities))
    print(names[best])
    for name, p in zip(names, probabilities):
        print(f"  {name}: {p:.6f}")
    return 0
