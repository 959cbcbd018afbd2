# Copyright 2026 The BEVTraj Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""BEVTraj: deformable BEV aggregation and iterative GMM trajectory decoding."""

import torch  # noqa: F401  loads the libtorch shared libraries the extension links against

from ._bevtraj import (
    BevTrajError,
    bilinear_sample,
    config_hash,
    default_config,
    evaluate,
    generate_dataset,
    generate_scene,
    gradcheck,
    load_config,
    min_ade,
    min_fde,
    miss_rate,
    predict,
    pretrain,
    read_dataset,
    train,
)

__all__ = [
    "BevTrajError",
    "bilinear_sample",
    "config_hash",
    "default_config",
    "evaluate",
    "generate_dataset",
    "generate_scene",
    "gradcheck",
    "load_config",
    "min_ade",
    "min_fde",
    "miss_rate",
    "predict",
    "pretrain",
    "read_dataset",
    "train",
]
