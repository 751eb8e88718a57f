#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pipesched {

enum class ErrorKind {
    // configuration / input validation
    InvalidTopology,
    NonPositiveBandwidth,
    InvalidProfile,
    InvalidCost,
    ConfigParse,
    UnknownApproach,
    // schedule construction
    InsufficientMicroBatches,
    InvalidChunking,
    OddChunkCount,
    OddDeviceCount,
    MergeConflict,
    InvalidSchedule,
    // simulation
    UnmappedDevice,
    DeadlockDetected,
    EmptyTimeline,
    // analysis
    UnsupportedCombination,
    EmptySpace,
    // runtime
    ShapeMismatch,
    ProtocolViolation,
};

std::string_view to_string(ErrorKind kind);

// True for the kinds that come from bad user input rather than a domain rule.
bool is_config_error(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

    ErrorKind kind() const noexcept { return kind_; }
    // The message without the kind prefix.
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::string detail_;
};

}  // namespace pipesched
