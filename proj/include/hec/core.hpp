/**
 * @file core.hpp
 * @brief Data-layer types: patients, visits, medical events and the seven
 *        clinical-variable categories, plus the three-form time model.
 *
 * Everything here is a value type with no storage or validation logic beyond
 * construction-time invariants. Validation against metadata lives in
 * registry.hpp; persistence lives in store.hpp.
 */

#ifndef HEC_CORE_HPP
#define HEC_CORE_HPP

#include "hec/date.hpp"
#include "hec/decimal.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace hec {

// =============================================================================
// Enumerations
// =============================================================================

/// Granularity axis for vertical integration. Declaration order is the total
/// order (Molecular < ... < Population).
enum class VerticalLevel { Molecular, Cellular, Tissue, Organ, Body, Population };

inline constexpr std::array<VerticalLevel, 6> all_vertical_levels{
    VerticalLevel::Molecular, VerticalLevel::Cellular, VerticalLevel::Tissue,
    VerticalLevel::Organ,     VerticalLevel::Body,     VerticalLevel::Population};

std::string_view to_string(VerticalLevel level) noexcept;
std::optional<VerticalLevel> parse_vertical_level(std::string_view text) noexcept;

enum class Sex { Male, Female, Unknown };

std::string_view to_string(Sex sex) noexcept;
std::optional<Sex> parse_sex(std::string_view text) noexcept;

/// The seven clinical-variable categories. The enumerator index equals the
/// index of the matching alternative in Payload.
enum class VariableCategory {
    Measurement,
    Annotation,
    ObservationByClassification,
    DICOMData,
    DICOMSeries,
    ExternalResource,
    MedicalConceptInstance,
};

std::string_view to_string(VariableCategory category) noexcept;
/// Accepts the canonical names plus "Classification" as a synonym for
/// ObservationByClassification.
std::optional<VariableCategory> parse_variable_category(std::string_view text) noexcept;

/// Closed enumeration with an open "Other(label)" escape.
template <typename Kind>
struct Labelled {
    Kind kind{};
    std::string other;  // only meaningful when kind == Kind::Other

    friend bool operator==(const Labelled&, const Labelled&) = default;
};

enum class VisitPurposeKind { Baseline, FollowUp, Emergency, Other };
enum class EventKindTag { Examination, Diagnosis, Treatment, Other };

using VisitPurpose = Labelled<VisitPurposeKind>;
using EventKind = Labelled<EventKindTag>;

/// `Other:<label>` for the open case.
std::string to_string(const VisitPurpose& purpose);
std::optional<VisitPurpose> parse_visit_purpose(std::string_view text);
std::string to_string(const EventKind& kind);
std::optional<EventKind> parse_event_kind(std::string_view text);

// =============================================================================
// Time
// =============================================================================

struct Instant {
    Date date;
    friend bool operator==(const Instant&, const Instant&) = default;
};

class Interval {
public:
    /// Throws Error(InvalidInterval) when start > end.
    Interval(Date start, Date end);

    Date start() const noexcept { return start_; }
    Date end() const noexcept { return end_; }

    friend bool operator==(const Interval&, const Interval&) = default;

private:
    Date start_;
    Date end_;
};

enum class TemporalRelation { Before, After, During };

std::string_view to_string(TemporalRelation relation) noexcept;
std::optional<TemporalRelation> parse_temporal_relation(std::string_view text) noexcept;

struct RelativeTo {
    std::string anchor_event;
    TemporalRelation relation = TemporalRelation::During;
    std::optional<int> offset_days;

    friend bool operator==(const RelativeTo&, const RelativeTo&) = default;
};

using TimeRef = std::variant<Instant, Interval, RelativeTo>;

/// A resolved time span; a missing bound is unbounded on that side.
struct ResolvedInterval {
    std::optional<Date> start;
    std::optional<Date> end;

    friend bool operator==(const ResolvedInterval&, const ResolvedInterval&) = default;
};

// =============================================================================
// Clinical variables
// =============================================================================

struct DicomTag {
    std::uint16_t group = 0;
    std::uint16_t element = 0;

    /// Eight hex digits, `GGGGEEEE`.
    static std::optional<DicomTag> parse(std::string_view text) noexcept;
    std::string to_string() const;

    friend auto operator<=>(const DicomTag&, const DicomTag&) = default;
};

namespace dicom_tags {
inline constexpr DicomTag patient_id{0x0010, 0x0020};
inline constexpr DicomTag study_date{0x0008, 0x0020};
inline constexpr DicomTag study_instance_uid{0x0020, 0x000D};
inline constexpr DicomTag series_instance_uid{0x0020, 0x000E};
inline constexpr DicomTag instance_number{0x0020, 0x0013};
} // namespace dicom_tags

class Measurement {
public:
    /// Throws Error(InvalidValue) on an empty unit symbol.
    Measurement(Decimal value, std::string unit);

    const Decimal& value() const noexcept { return value_; }
    const std::string& unit() const noexcept { return unit_; }

    friend bool operator==(const Measurement&, const Measurement&) = default;

private:
    Decimal value_;
    std::string unit_;
};

struct Annotation {
    std::string text;
    std::optional<std::string> attached_to;  // another variable's id

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct ObservationByClassification {
    std::string item;
    friend bool operator==(const ObservationByClassification&,
                           const ObservationByClassification&) = default;
};

struct DicomData {
    std::vector<std::pair<DicomTag, std::string>> tags;

    const std::string* find(DicomTag tag) const noexcept;
    friend bool operator==(const DicomData&, const DicomData&) = default;
};

struct DicomSeries {
    std::vector<std::string> members;  // DICOMData variable ids, instance order
    std::string study_id;
    std::string series_id;

    friend bool operator==(const DicomSeries&, const DicomSeries&) = default;
};

struct ExternalResource {
    std::string uri;
    friend bool operator==(const ExternalResource&, const ExternalResource&) = default;
};

struct MedicalConceptInstance {
    std::string concept_uri;
    friend bool operator==(const MedicalConceptInstance&, const MedicalConceptInstance&) = default;
};

using Payload = std::variant<Measurement, Annotation, ObservationByClassification, DicomData,
                             DicomSeries, ExternalResource, MedicalConceptInstance>;

inline VariableCategory category_of(const Payload& payload) noexcept {
    return static_cast<VariableCategory>(payload.index());
}

/// Canonical scalar rendering used for statistics and comparisons.
std::string value_text(const Payload& payload);

struct ClinicalVariable {
    std::string id;  // assigned by the store when empty
    std::string cvt_id;
    Payload payload{Annotation{}};

    friend bool operator==(const ClinicalVariable&, const ClinicalVariable&) = default;
};

// =============================================================================
// Record hierarchy
// =============================================================================

struct PatientRecord {
    std::string pseudonym;
    Sex sex = Sex::Unknown;
    Date birth_date;
    std::vector<std::pair<std::string, std::string>> demographics;
    std::string family_history;

    friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

struct Visit {
    std::string visit_id;
    std::string patient;  // pseudonym
    VisitPurpose purpose;
    Date date;
    std::vector<std::string> events;

    friend bool operator==(const Visit&, const Visit&) = default;
};

struct MedicalEvent {
    std::string event_id;
    std::string event_type;
    std::string visit;
    TimeRef time = Instant{};
    std::vector<ClinicalVariable> variables;
    EventKind kind;

    friend bool operator==(const MedicalEvent&, const MedicalEvent&) = default;
};

using EventLookup = std::function<const MedicalEvent*(std::string_view event_id)>;

/**
 * Resolves an event's time reference to a concrete span.
 *
 * Relative references follow their anchor chain: Before yields the span
 * unbounded below up to the anchor's start, After yields the span unbounded
 * above from the anchor's end, During yields the anchor span; each is shifted
 * by the optional day offset. A missing anchor, or an anchor whose needed
 * side is itself unbounded, yields nullopt (unresolvable).
 *
 * Throws Error(RelativeTimeCycle) when the chain revisits an event.
 */
std::optional<ResolvedInterval> resolve_time(const MedicalEvent& event, const EventLookup& lookup);

} // namespace hec

#endif // HEC_CORE_HPP
