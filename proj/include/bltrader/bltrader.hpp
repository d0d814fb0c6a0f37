#pragma once

// Everything except config.hpp, which additionally needs Boost.PropertyTree.

#include "bltrader/backtest.hpp"
#include "bltrader/blmodel.hpp"
#include "bltrader/errors.hpp"
#include "bltrader/exchange.hpp"
#include "bltrader/gradnet/gradnet.hpp"
#include "bltrader/marketdata.hpp"
#include "bltrader/policy.hpp"
#include "bltrader/synthetic.hpp"
#include "bltrader/trainer.hpp"
