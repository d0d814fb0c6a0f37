#pragma once

#include <stdexcept>
#include <string>

namespace bltrader {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define BLTRADER_DEFINE_ERROR(Name)       \
    class Name : public Error {           \
    public:                               \
        using Error::Error;               \
    }

// Input / data errors
BLTRADER_DEFINE_ERROR(MissingTicker);
BLTRADER_DEFINE_ERROR(NonPositivePrice);
BLTRADER_DEFINE_ERROR(InsufficientHistory);
BLTRADER_DEFINE_ERROR(ParseError);
BLTRADER_DEFINE_ERROR(MissingCheckpoint);
BLTRADER_DEFINE_ERROR(MissingFile);

// Numerical errors
BLTRADER_DEFINE_ERROR(TooFewSamples);
BLTRADER_DEFINE_ERROR(SingularCovariance);
BLTRADER_DEFINE_ERROR(ShapeMismatch);
BLTRADER_DEFINE_ERROR(NotScalar);
BLTRADER_DEFINE_ERROR(DivergenceDetected);
BLTRADER_DEFINE_ERROR(EmptySeries);

#undef BLTRADER_DEFINE_ERROR

/// Total asset value hit zero or below at a daily mark. Carries where it happened.
class Bankrupt : public Error {
public:
    Bankrupt(const std::string& what, int period, int day)
        : Error(what), period_(period), day_(day) {}

    int period() const noexcept { return period_; }
    int day() const noexcept { return day_; }

private:
    int period_;
    int day_;
};

}  // namespace bltrader
