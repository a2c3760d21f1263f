#include "hec/core.hpp"

#include "hec/error.hpp"

#include <cstdio>
#include <set>

namespace hec {

std::string_view to_string(VerticalLevel level) noexcept {
    switch (level) {
    case VerticalLevel::Molecular: return "Molecular";
    case VerticalLevel::Cellular: return "Cellular";
    case VerticalLevel::Tissue: return "Tissue";
    case VerticalLevel::Organ: return "Organ";
    case VerticalLevel::Body: return "Body";
    case VerticalLevel::Population: return "Population";
    }
    return "";
}

std::optional<VerticalLevel> parse_vertical_level(std::string_view text) noexcept {
    for (auto level : all_vertical_levels) {
        if (to_string(level) == text) {
            return level;
        }
    }
    return std::nullopt;
}

std::string_view to_string(Sex sex) noexcept {
    switch (sex) {
    case Sex::Male: return "Male";
    case Sex::Female: return "Female";
    case Sex::Unknown: return "Unknown";
    }
    return "";
}

std::optional<Sex> parse_sex(std::string_view text) noexcept {
    for (auto s : {Sex::Male, Sex::Female, Sex::Unknown}) {
        if (to_string(s) == text) {
            return s;
        }
    }
    return std::nullopt;
}

std::string_view to_string(VariableCategory category) noexcept {
    switch (category) {
    case VariableCategory::Measurement: return "Measurement";
    case VariableCategory::Annotation: return "Annotation";
    case VariableCategory::ObservationByClassification: return "ObservationByClassification";
    case VariableCategory::DICOMData: return "DICOMData";
    case VariableCategory::DICOMSeries: return "DICOMSeries";
    case VariableCategory::ExternalResource: return "ExternalResource";
    case VariableCategory::MedicalConceptInstance: return "MedicalConceptInstance";
    }
    return "";
}

std::optional<VariableCategory> parse_variable_category(std::string_view text) noexcept {
    if (text == "Classification") {
        return VariableCategory::ObservationByClassification;
    }
    for (int i = 0; i < 7; ++i) {
        auto c = static_cast<VariableCategory>(i);
        if (to_string(c) == text) {
            return c;
        }
    }
    return std::nullopt;
}

namespace {

template <typename Kind>
std::string labelled_to_string(const Labelled<Kind>& value, std::initializer_list<const char*> names) {
    const auto index = static_cast<std::size_t>(value.kind);
    if (value.kind == Kind::Other) {
        return "Other:" + value.other;
    }
    return *(names.begin() + index);
}

template <typename Kind>
std::optional<Labelled<Kind>> parse_labelled(std::string_view text,
                                             std::initializer_list<const char*> names) {
    if (text.starts_with("Other:")) {
        return Labelled<Kind>{Kind::Other, std::string(text.substr(6))};
    }
    std::size_t i = 0;
    for (const char* name : names) {
        if (text == name) {
            return Labelled<Kind>{static_cast<Kind>(i), {}};
        }
        ++i;
    }
    return std::nullopt;
}

} // namespace

std::string to_string(const VisitPurpose& purpose) {
    return labelled_to_string(purpose, {"Baseline", "FollowUp", "Emergency"});
}

std::optional<VisitPurpose> parse_visit_purpose(std::string_view text) {
    return parse_labelled<VisitPurposeKind>(text, {"Baseline", "FollowUp", "Emergency"});
}

std::string to_string(const EventKind& kind) {
    return labelled_to_string(kind, {"Examination", "Diagnosis", "Treatment"});
}

std::optional<EventKind> parse_event_kind(std::string_view text) {
    return parse_labelled<EventKindTag>(text, {"Examination", "Diagnosis", "Treatment"});
}

Interval::Interval(Date start, Date end) : start_(start), end_(end) {
    if (end < start) {
        throw Error(Errc::InvalidInterval,
                    "interval start " + start.to_string() + " is after end " + end.to_string());
    }
}

std::string_view to_string(TemporalRelation relation) noexcept {
    switch (relation) {
    case TemporalRelation::Before: return "Before";
    case TemporalRelation::After: return "After";
    case TemporalRelation::During: return "During";
    }
    return "";
}

std::optional<TemporalRelation> parse_temporal_relation(std::string_view text) noexcept {
    for (auto r : {TemporalRelation::Before, TemporalRelation::After, TemporalRelation::During}) {
        if (to_string(r) == text) {
            return r;
        }
    }
    return std::nullopt;
}

std::optional<DicomTag> DicomTag::parse(std::string_view text) noexcept {
    if (text.size() != 8) {
        return std::nullopt;
    }
    std::uint32_t value = 0;
    for (char c : text) {
        std::uint32_t digit = 0;
        if (c >= '0' && c <= '9') {
            digit = static_cast<std::uint32_t>(c - '0');
        } else if (c >= 'A' && c <= 'F') {
            digit = static_cast<std::uint32_t>(c - 'A' + 10);
        } else if (c >= 'a' && c <= 'f') {
            digit = static_cast<std::uint32_t>(c - 'a' + 10);
        } else {
            return std::nullopt;
        }
        value = value * 16 + digit;
    }
    return DicomTag{static_cast<std::uint16_t>(value >> 16), static_cast<std::uint16_t>(value & 0xFFFF)};
}

std::string DicomTag::to_string() const {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%04X%04X", group, element);
    return buf;
}

Measurement::Measurement(Decimal value, std::string unit) : value_(value), unit_(std::move(unit)) {
    if (unit_.empty()) {
        throw Error(Errc::InvalidValue, "a measurement requires a unit");
    }
}

const std::string* DicomData::find(DicomTag tag) const noexcept {
    for (const auto& [t, v] : tags) {
        if (t == tag) {
            return &v;
        }
    }
    return nullptr;
}

std::string value_text(const Payload& payload) {
    struct Visitor {
        std::string operator()(const Measurement& m) const { return m.value().to_string() + " " + m.unit(); }
        std::string operator()(const Annotation& a) const { return a.text; }
        std::string operator()(const ObservationByClassification& o) const { return o.item; }
        std::string operator()(const DicomData& d) const {
            std::string out;
            for (const auto& [tag, value] : d.tags) {
                if (!out.empty()) {
                    out += ';';
                }
                out += tag.to_string() + "=" + value;
            }
            return out;
        }
        std::string operator()(const DicomSeries& s) const { return s.study_id + "/" + s.series_id; }
        std::string operator()(const ExternalResource& r) const { return r.uri; }
        std::string operator()(const MedicalConceptInstance& c) const { return c.concept_uri; }
    };
    return std::visit(Visitor{}, payload);
}

namespace {

std::optional<ResolvedInterval> resolve_recursive(const MedicalEvent& event, const EventLookup& lookup,
                                                  std::set<std::string>& visiting) {
    if (const auto* instant = std::get_if<Instant>(&event.time)) {
        return ResolvedInterval{instant->date, instant->date};
    }
    if (const auto* interval = std::get_if<Interval>(&event.time)) {
        return ResolvedInterval{interval->start(), interval->end()};
    }
    const auto& rel = std::get<RelativeTo>(event.time);
    if (!visiting.insert(event.event_id).second) {
        throw Error(Errc::RelativeTimeCycle, "relative time chain revisits event " + event.event_id);
    }
    if (visiting.contains(rel.anchor_event)) {
        throw Error(Errc::RelativeTimeCycle, "relative time chain revisits event " + rel.anchor_event);
    }
    const MedicalEvent* anchor = lookup ? lookup(rel.anchor_event) : nullptr;
    if (anchor == nullptr) {
        return std::nullopt;
    }
    auto base = resolve_recursive(*anchor, lookup, visiting);
    if (!base) {
        return std::nullopt;
    }
    const long long offset = rel.offset_days.value_or(0);
    auto shift = [offset](const std::optional<Date>& d) -> std::optional<Date> {
        if (!d) {
            return std::nullopt;
        }
        return d->plus_days(offset);
    };
    switch (rel.relation) {
    case TemporalRelation::Before:
        if (!base->start) {
            return std::nullopt;
        }
        return ResolvedInterval{std::nullopt, shift(base->start)};
    case TemporalRelation::After:
        if (!base->end) {
            return std::nullopt;
        }
        return ResolvedInterval{shift(base->end), std::nullopt};
    case TemporalRelation::During:
        return ResolvedInterval{shift(base->start), shift(base->end)};
    }
    return std::nullopt;
}

} // namespace

std::optional<ResolvedInterval> resolve_time(const MedicalEvent& event, const EventLookup& lookup) {
    std::set<std::string> visiting;
    return resolve_recursive(event, lookup, visiting);
}

} // namespace hec
