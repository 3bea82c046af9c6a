#pragma once

#include <stdexcept>
#include <string>

namespace hsml {

// Each category maps to a distinct CLI exit code (see tools/hsml.cpp).
enum class ErrorKind {
    invalid_shape,
    invalid_value,
    invalid_episode,
    invalid_config,
    numerical_failure,
    ingestion,
    io,
    usage,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define HSML_DEFINE_ERROR(Name, Kind)                                       \
    class Name : public Error {                                             \
    public:                                                                 \
        explicit Name(const std::string& message) : Error(Kind, message) {} \
    };

HSML_DEFINE_ERROR(InvalidShape, ErrorKind::invalid_shape)
HSML_DEFINE_ERROR(InvalidValue, ErrorKind::invalid_value)
HSML_DEFINE_ERROR(InvalidEpisode, ErrorKind::invalid_episode)
HSML_DEFINE_ERROR(InvalidConfig, ErrorKind::invalid_config)
HSML_DEFINE_ERROR(NumericalFailure, ErrorKind::numerical_failure)
HSML_DEFINE_ERROR(IngestionError, ErrorKind::ingestion)
HSML_DEFINE_ERROR(IoError, ErrorKind::io)
HSML_DEFINE_ERROR(UsageError, ErrorKind::usage)

#undef HSML_DEFINE_ERROR

} // namespace hsml
