// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "codemerge/analysis.hpp"
#include "codemerge/checkpoint_io.hpp"
#include "codemerge/codebook.hpp"
#include "codemerge/errors.hpp"
#include "codemerge/fingerprint.hpp"
#include "codemerge/merging.hpp"
#include "codemerge/rng.hpp"
#include "codemerge/scoring.hpp"
#include "codemerge/simulator.hpp"
#include "codemerge/stats.hpp"
#include "codemerge/tensor.hpp"
