#pragma once

// Umbrella header: the whole library.

#include "loopnet/common.hpp"
#include "loopnet/tensor.hpp"
#include "loopnet/ops.hpp"
#include "loopnet/config.hpp"
#include "loopnet/model.hpp"
#include "loopnet/loop.hpp"
#include "loopnet/data.hpp"
#include "loopnet/optim.hpp"
#include "loopnet/checkpoint.hpp"
#include "loopnet/train.hpp"
#include "loopnet/sample.hpp"
#include "loopnet/verify.hpp"
