/**
 * @file registry.hpp
 * @brief Metadata layer: units, classifications, clinical variable types
 *        (CVTs) and medical event types (METs).
 *
 * A variable may only be stored once its CVT is registered. The registry
 * evolves monotonically: ids are never removed, classifications only gain
 * items and METs only gain members, so data validated under an older
 * registry stays valid under every later one.
 *
 * The registry is internally synchronized: definitions are serialized and
 * readers always observe whole definitions.
 */

#ifndef HEC_REGISTRY_HPP
#define HEC_REGISTRY_HPP

#include "hec/core.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace hec {

struct Unit {
    std::string symbol;
    std::optional<std::string> description;

    friend bool operator==(const Unit&, const Unit&) = default;
};

struct Classification {
    std::string name;
    std::vector<std::string> items;

    friend bool operator==(const Classification&, const Classification&) = default;
};

struct ClinicalVariableType {
    std::string id;
    std::string name;
    VariableCategory category = VariableCategory::Measurement;
    std::optional<std::string> unit;            // iff category == Measurement
    std::optional<std::string> classification;  // iff category == ObservationByClassification
    VerticalLevel vertical_level = VerticalLevel::Body;

    friend bool operator==(const ClinicalVariableType&, const ClinicalVariableType&) = default;
};

struct MedicalEventType {
    std::string id;
    std::string name;
    std::set<std::string> member_cvts;
    VerticalLevel vertical_level = VerticalLevel::Body;

    friend bool operator==(const MedicalEventType&, const MedicalEventType&) = default;
};

enum class ViolationCode {
    UnknownType,
    CategoryMismatch,
    UnitMismatch,
    ValueNotInClassification,
    MissingClassification,
    UnknownConceptURI,
    EventTypeMismatch,
};

std::string_view to_string(ViolationCode code) noexcept;

struct Violation {
    ViolationCode code;
    std::string detail;

    friend bool operator==(const Violation&, const Violation&) = default;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool valid() const noexcept { return violations.empty(); }
    bool has(ViolationCode code) const noexcept;
    std::string summary() const;
};

/// Answers whether a concept URI is known. When absent, concept instances are
/// only checked for the `scheme:localname` shape.
using ConceptResolver = std::function<bool(std::string_view uri)>;

class Registry {
public:
    Registry() = default;
    Registry(const Registry& other);
    Registry& operator=(const Registry& other);

    /// Throws DuplicateId when the symbol exists, InvalidDefinition on an empty symbol.
    void define_unit(const Unit& unit);

    /**
     * Registers a classification, or extends an existing one with the same
     * name. An extension must keep every existing item (ShrinkingMemberSet)
     * and add at least one (DuplicateId). Items must be distinct and
     * non-empty with at least two of them (InvalidDefinition).
     */
    void define_classification(const Classification& classification);

    /**
     * Registers a CVT. Errors: DuplicateId, MissingUnit, MissingClassification,
     * DanglingReference (unknown unit/classification), InvalidDefinition
     * (empty id/name, or a unit/classification given for a category that
     * does not take one).
     */
    std::string define_cvt(const ClinicalVariableType& cvt);

    /**
     * Registers a MET, or grows an existing one. Redefinition must carry a
     * strict superset of the current members (ShrinkingMemberSet otherwise,
     * DuplicateId when equal) at the same vertical level.
     */
    std::string define_met(const MedicalEventType& met);

    /// Applies every definition of `other` in dependency order.
    void merge(const Registry& other);

    std::optional<Unit> find_unit(std::string_view symbol) const;
    std::optional<Classification> find_classification(std::string_view name) const;
    std::optional<ClinicalVariableType> find_cvt(std::string_view id) const;
    std::optional<ClinicalVariableType> find_cvt_by_name(std::string_view name) const;
    std::optional<MedicalEventType> find_met(std::string_view id) const;

    bool has_cvt(std::string_view id) const;
    bool has_met(std::string_view id) const;

    std::vector<Unit> units() const;
    std::vector<Classification> classifications() const;
    std::vector<ClinicalVariableType> cvts() const;
    std::vector<MedicalEventType> mets() const;

    /// Checks one variable against its CVT and the event's MET. Every
    /// applicable check runs; violations are reported, never thrown.
    ValidationReport validate_variable(const ClinicalVariable& cv, std::string_view met_id,
                                       const ConceptResolver& concepts = {}) const;

    /// JSON document with `units`, `classifications`, `cvts`, `mets` arrays.
    std::string serialize() const;
    static Registry parse(std::string_view json_text);

    void save(const std::filesystem::path& path) const;
    static Registry load(const std::filesystem::path& path);

private:
    // Ordered by id for deterministic serialization.
    std::map<std::string, Unit, std::less<>> units_;
    std::map<std::string, Classification, std::less<>> classifications_;
    std::map<std::string, ClinicalVariableType, std::less<>> cvts_;
    std::map<std::string, MedicalEventType, std::less<>> mets_;
    mutable std::shared_mutex mutex_;
};

} // namespace hec

#endif // HEC_REGISTRY_HPP
