// Copyright 2026 The uvos Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Umbrella header for the whole library.
#include "uvos/autodiff.hpp"
#include "uvos/checkpoint.hpp"
#include "uvos/common.hpp"
#include "uvos/core.hpp"
#include "uvos/dataio.hpp"
#include "uvos/gradcheck.hpp"
#include "uvos/imageops.hpp"
#include "uvos/inference.hpp"
#include "uvos/loss_frame_short.hpp"
#include "uvos/loss_long_video.hpp"
#include "uvos/metrics.hpp"
#include "uvos/network.hpp"
#include "uvos/priors.hpp"
#include "uvos/selfcheck.hpp"
#include "uvos/tensor.hpp"
#include "uvos/trainer.hpp"
