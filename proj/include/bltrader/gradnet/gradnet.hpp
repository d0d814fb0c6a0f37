#pragma once

#include "bltrader/gradnet/ops.hpp"
#include "bltrader/gradnet/params.hpp"
#include "bltrader/gradnet/tensor.hpp"
