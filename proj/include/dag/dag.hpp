#pragma once

#include "dag/attention.hpp"
#include "dag/baseline.hpp"
#include "dag/channel_causal.hpp"
#include "dag/checkpoint.hpp"
#include "dag/config.hpp"
#include "dag/dag_model.hpp"
#include "dag/data.hpp"
#include "dag/embedding.hpp"
#include "dag/errors.hpp"
#include "dag/hash.hpp"
#include "dag/layers.hpp"
#include "dag/ops.hpp"
#include "dag/optim.hpp"
#include "dag/temporal_causal.hpp"
#include "dag/tensor.hpp"
#include "dag/train_eval.hpp"
