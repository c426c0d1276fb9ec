#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vdsk {

// training diverged (non-finite loss); carries the failing step
struct TrainingFailure : std::runtime_error {
    int step;
    TrainingFailure(const std::string& msg, int step_)
        : std::runtime_error(msg), step(step_) {}
};

// prompt could not be canonicalized; names the unresolved slot
struct UnresolvablePrompt : std::runtime_error {
    std::string missing_slot;
    UnresolvablePrompt(const std::string& msg, std::string slot)
        : std::runtime_error(msg), missing_slot(std::move(slot)) {}
};

// a required earlier pipeline stage has not produced its artifact
struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// gradient check exceeded tolerance; names the layer family
struct CheckFailure : std::runtime_error {
    std::string family;
    CheckFailure(const std::string& msg, std::string family_)
        : std::runtime_error(msg), family(std::move(family_)) {}
};

struct EmptyClipError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace vdsk
