from .cnn import (
    LrnParams,
    ModelSpec,
    Net,
    build_small_cnn,
    build_vgg_variant,
    conv_fc_census,
    expected_param_shapes,
    forward,
    gradient_check,
    init_checkpoint,
    instantiate,
    load_into_module,
    param_count,
    spec_from_checkpoint,
    state_from_module,
    transfer_init,
)
from .hog_svm import (
    HogParams,
    HogSvmModel,
    hog_descriptor_length,
    hog_features,
    hog_features_batch,
    load_hog_svm,
    predict_hog_svm,
    save_hog_svm,
    train_hog_svm,
)

__all__ = [
    "LrnParams",
    "ModelSpec",
    "Net",
    "build_small_cnn",
    "build_vgg_variant",
    "conv_fc_census",
    "expected_param_shapes",
    "forward",
    "gradient_check",
    "init_checkpoint",
    "instantiate",
    "load_into_module",
    "param_count",
    "spec_from_checkpoint",
    "state_from_module",
    "transfer_init",
    "HogParams",
    "HogSvmModel",
    "hog_descriptor_length",
    "hog_features",
    "hog_features_batch",
    "load_hog_svm",
    "predict_hog_svm",
    "save_hog_svm",
    "train_hog_svm",
]
