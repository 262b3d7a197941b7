// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deskt5/checkpoint.hpp"
#include "deskt5/config.hpp"
#include "deskt5/data.hpp"
#include "deskt5/error.hpp"
#include "deskt5/metrics.hpp"
#include "deskt5/model.hpp"
#include "deskt5/ops.hpp"
#include "deskt5/optim.hpp"
#include "deskt5/rng.hpp"
#include "deskt5/schedule.hpp"
#include "deskt5/tensor.hpp"
#include "deskt5/trainer.hpp"
