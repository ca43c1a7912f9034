#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mema {

// Failure categories. The CLI maps Input* codes to exit status 2 and the
// numeric ones to 3.
enum class ErrorCode {
    ParseError,
    SchemaError,
    MissingField,
    RaggedData,
    NegativeRadicand,
    DomainError,
    EmptyInput,
    LengthMismatch,
    SingleStudyVariance,
    DimensionMismatch,
    NotPSD,
    SingularDesign,
    InitFailure,
    NonFiniteDensity,
    InsufficientDraws,
    EmptyRegion,
    DegenerateInput,
    IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

// True for errors caused by bad user input rather than a numerical failure.
bool is_input_error(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace mema
