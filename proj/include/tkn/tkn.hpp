// Copyright 2026 The tkn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef TKN_TKN_HPP_
#define TKN_TKN_HPP_

#include "tkn/bench.hpp"
#include "tkn/checkpoint.hpp"
#include "tkn/config.hpp"
#include "tkn/detector.hpp"
#include "tkn/flops.hpp"
#include "tkn/grad_check.hpp"
#include "tkn/manifest.hpp"
#include "tkn/metrics.hpp"
#include "tkn/pipelines.hpp"
#include "tkn/predictor.hpp"
#include "tkn/seqio.hpp"
#include "tkn/sprites.hpp"
#include "tkn/training.hpp"

#endif  // TKN_TKN_HPP_
