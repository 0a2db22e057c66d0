#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace infil {

// Runtime error tagged with the pipeline stage that raised it. The CLI turns
// uncaught errors into a structured {stage, message} record on stderr.
class Error : public std::runtime_error {
public:
    Error(std::string stage, const std::string& message)
        : std::runtime_error(message), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace infil
