// Copyright 2026 The robustnd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Convenience header: the whole engine minus the test oracles.
#pragma once

#include "robustnd/attack.hpp"
#include "robustnd/auroc.hpp"
#include "robustnd/backbone.hpp"
#include "robustnd/config.hpp"
#include "robustnd/error.hpp"
#include "robustnd/formats.hpp"
#include "robustnd/gmm.hpp"
#include "robustnd/ops.hpp"
#include "robustnd/parallel.hpp"
#include "robustnd/parity.hpp"
#include "robustnd/protocol.hpp"
#include "robustnd/report.hpp"
#include "robustnd/scoring.hpp"
#include "robustnd/tensor.hpp"
#include "robustnd/version.hpp"
