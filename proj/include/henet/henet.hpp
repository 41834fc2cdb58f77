// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "henet/bench.hpp"
#include "henet/ckks.hpp"
#include "henet/encoding.hpp"
#include "henet/graph.hpp"
#include "henet/models.hpp"
#include "henet/modmath.hpp"
#include "henet/params.hpp"
#include "henet/protocol.hpp"
#include "henet/rng.hpp"
#include "henet/serialize.hpp"
