/**
 * @file error.hpp
 * @brief Error codes shared by every module of the integration engine.
 */

#ifndef HEC_ERROR_HPP
#define HEC_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace hec {

enum class Errc {
    // core
    InvalidInterval,
    RelativeTimeCycle,
    InvalidValue,
    // registry
    DuplicateId,
    MissingClassification,
    MissingUnit,
    DanglingReference,
    UnknownCVT,
    ShrinkingMemberSet,
    InvalidDefinition,
    // store
    ValidationFailed,
    UnknownVisit,
    UnknownPatient,
    InvalidVisitDate,
    MalformedCSV,
    MappingError,
    MalformedTag,
    EmptySeries,
    InvalidSeries,
    MalformedRecord,
    IoError,
    // ontology
    DuplicateURI,
    UnknownEndpoint,
    CycleIntroduced,
    UnknownConcept,
    AmbiguousMapping,
    NoCommonAncestor,
    ZeroCorpus,
    MalformedOntology,
    // query
    SyntaxError,
    StaleMetadata,
    // federation
    DuplicateNode,
    UnknownNode,
    NoNodes,
};

constexpr std::string_view errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::InvalidInterval: return "InvalidInterval";
    case Errc::RelativeTimeCycle: return "RelativeTimeCycle";
    case Errc::InvalidValue: return "InvalidValue";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::MissingClassification: return "MissingClassification";
    case Errc::MissingUnit: return "MissingUnit";
    case Errc::DanglingReference: return "DanglingReference";
    case Errc::UnknownCVT: return "UnknownCVT";
    case Errc::ShrinkingMemberSet: return "ShrinkingMemberSet";
    case Errc::InvalidDefinition: return "InvalidDefinition";
    case Errc::ValidationFailed: return "ValidationFailed";
    case Errc::UnknownVisit: return "UnknownVisit";
    case Errc::UnknownPatient: return "UnknownPatient";
    case Errc::InvalidVisitDate: return "InvalidVisitDate";
    case Errc::MalformedCSV: return "MalformedCSV";
    case Errc::MappingError: return "MappingError";
    case Errc::MalformedTag: return "MalformedTag";
    case Errc::EmptySeries: return "EmptySeries";
    case Errc::InvalidSeries: return "InvalidSeries";
    case Errc::MalformedRecord: return "MalformedRecord";
    case Errc::IoError: return "IoError";
    case Errc::DuplicateURI: return "DuplicateURI";
    case Errc::UnknownEndpoint: return "UnknownEndpoint";
    case Errc::CycleIntroduced: return "CycleIntroduced";
    case Errc::UnknownConcept: return "UnknownConcept";
    case Errc::AmbiguousMapping: return "AmbiguousMapping";
    case Errc::NoCommonAncestor: return "NoCommonAncestor";
    case Errc::ZeroCorpus: return "ZeroCorpus";
    case Errc::MalformedOntology: return "MalformedOntology";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::StaleMetadata: return "StaleMetadata";
    case Errc::DuplicateNode: return "DuplicateNode";
    case Errc::UnknownNode: return "UnknownNode";
    case Errc::NoNodes: return "NoNodes";
    }
    return "Unknown";
}

/// Domain failure. The message is prefixed with nothing; callers format
/// `code()` and `what()` as they see fit.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace hec

#endif // HEC_ERROR_HPP
