#include "mema/error.hpp"

namespace mema {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::SchemaError: return "SchemaError";
        case ErrorCode::MissingField: return "MissingField";
        case ErrorCode::RaggedData: return "RaggedData";
        case ErrorCode::NegativeRadicand: return "NegativeRadicand";
        case ErrorCode::DomainError: return "DomainError";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::SingleStudyVariance: return "SingleStudyVariance";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::NotPSD: return "NotPSD";
        case ErrorCode::SingularDesign: return "SingularDesign";
        case ErrorCode::InitFailure: return "InitFailure";
        case ErrorCode::NonFiniteDensity: return "NonFiniteDensity";
        case ErrorCode::InsufficientDraws: return "InsufficientDraws";
        case ErrorCode::EmptyRegion: return "EmptyRegion";
        case ErrorCode::DegenerateInput: return "DegenerateInput";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

bool is_input_error(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ParseError:
        case ErrorCode::SchemaError:
        case ErrorCode::MissingField:
        case ErrorCode::RaggedData:
        case ErrorCode::NegativeRadicand:
        case ErrorCode::DomainError:
        case ErrorCode::EmptyInput:
        case ErrorCode::LengthMismatch:
        case ErrorCode::DimensionMismatch:
        case ErrorCode::IoError:
            return true;
        default:
            return false;
    }
}

}  // namespace mema
