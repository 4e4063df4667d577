// Copyright 2026 The MocDT Authors.
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

#pragma once

#include "mocdt/augment.hpp"
#include "mocdt/checkpoint.hpp"
#include "mocdt/corpus.hpp"
#include "mocdt/diff/adam.hpp"
#include "mocdt/diff/array.hpp"
#include "mocdt/diff/ops.hpp"
#include "mocdt/diff/tape.hpp"
#include "mocdt/error.hpp"
#include "mocdt/eval.hpp"
#include "mocdt/infer.hpp"
#include "mocdt/model.hpp"
#include "mocdt/objectives.hpp"
#include "mocdt/random.hpp"
#include "mocdt/train.hpp"
