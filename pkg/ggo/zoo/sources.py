from __future__ import annotations

from typing import List

from torchvision import models

from .base import ArchitectureDefinition


def build_architecture_definitions() -> List[ArchitectureDefinition]:
    return [
        ArchitectureDefinition(
            key="AlexNet",
            variant="alexnet",
            builder=models.alexnet,
            weights=models.AlexNet_Weights.IMAGENET1K_V1,
            input_size=224,
            head_paths=("classifier.6",),
        ),
        ArchitectureDefinition(
            key="VGG",
            variant="vgg16",
            builder=models.vgg16,
            weights=models.VGG16_Weights.IMAGENET1K_V1,
            input_size=224,
            head_paths=("classifier.6",),
            notes="VGG-16 without batch norm",
        ),
        ArchitectureDefinition(
            key="ResNet152",
            variant="resnet152",
            builder=models.resnet152,
            weights=models.ResNet152_Weights.IMAGENET1K_V1,
            input_size=224,
            head_paths=("fc",),
        ),
        ArchitectureDefinition(
            key="WideResNet101",
            variant="wide_resnet101_2",
            builder=models.wide_resnet101_2,
            weights=models.Wide_ResNet101_2_Weights.IMAGENET1K_V1,
            input_size=224,
            head_paths=("fc",),
        ),
        ArchitectureDefinition(
            key="DenseNet",
            variant="densenet121",
            builder=models.densenet121,
            weights=models.DenseNet121_Weights.IMAGENET1K_V1,
            input_size=224,
            head_paths=("classifier",),
        ),
        ArchitectureDefinition(
            key="DenseNet201",
            variant="densenet201",
            builder=models.densenet201,
            weights=models.DenseNet201_Weights.IMAGENET1K_V1,
            input_size=224,
            head_paths=("classifier",),
        ),
        ArchitectureDefinition(
            key="InceptionNet",
            variant="inception_v3",
            builder=models.inception_v3,
            weights=models.Inception_V3_Weights.IMAGENET1K_V1,
            input_size=299,
            head_paths=("fc", "AuxLogits.fc"),
            builder_kwargs={"aux_logits": True},
            scratch_kwargs={"init_weights": True},
            pretrained_kwargs={"transform_input": True},
            notes="auxiliary logits weighted 0.4 during training, unused at eval",
        ),
        ArchitectureDefinition(
            key="SqueezeNet",
            variant="squeezenet1_1",
            builder=models.squeezenet1_1,
            weights=models.SqueezeNet1_1_Weights.IMAGENET1K_V1,
            input_size=224,
            head_paths=("classifier.1",),
            notes="final 1x1 convolution is the classifier",
        ),
        ArchitectureDefinition(
            key="VTB32",
            variant="vit_b_32",
            builder=models.vit_b_32,
            weights=models.ViT_B_32_Weights.IMAGENET1K_V1,
            input_size=224,
            head_paths=("heads.head",),
        ),
    ]
