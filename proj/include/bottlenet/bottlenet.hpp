#pragma once

#include "bottlenet/bottleneck.hpp"
#include "bottlenet/bytes.hpp"
#include "bottlenet/checkpoint.hpp"
#include "bottlenet/codec.hpp"
#include "bottlenet/codec_layer.hpp"
#include "bottlenet/cost.hpp"
#include "bottlenet/dataset.hpp"
#include "bottlenet/graph.hpp"
#include "bottlenet/layers.hpp"
#include "bottlenet/models.hpp"
#include "bottlenet/planner.hpp"
#include "bottlenet/protocol.hpp"
#include "bottlenet/rng.hpp"
#include "bottlenet/runtime.hpp"
#include "bottlenet/tensor.hpp"
#include "bottlenet/train.hpp"
