#include "hec/registry.hpp"

#include "hec/error.hpp"
#include "io_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <mutex>

namespace hec {

using json = nlohmann::json;

std::string_view to_string(ViolationCode code) noexcept {
    switch (code) {
    case ViolationCode::UnknownType: return "UnknownType";
    case ViolationCode::CategoryMismatch: return "CategoryMismatch";
    case ViolationCode::UnitMismatch: return "UnitMismatch";
    case ViolationCode::ValueNotInClassification: return "ValueNotInClassification";
    case ViolationCode::MissingClassification: return "MissingClassification";
    case ViolationCode::UnknownConceptURI: return "UnknownConceptURI";
    case ViolationCode::EventTypeMismatch: return "EventTypeMismatch";
    }
    return "";
}

bool ValidationReport::has(ViolationCode code) const noexcept {
    return std::any_of(violations.begin(), violations.end(),
                       [code](const Violation& v) { return v.code == code; });
}

std::string ValidationReport::summary() const {
    std::string out;
    for (const auto& v : violations) {
        if (!out.empty()) {
            out += "; ";
        }
        out += std::string(to_string(v.code)) + ": " + v.detail;
    }
    return out;
}

Registry::Registry(const Registry& other) {
    std::shared_lock lock(other.mutex_);
    units_ = other.units_;
    classifications_ = other.classifications_;
    cvts_ = other.cvts_;
    mets_ = other.mets_;
}

Registry& Registry::operator=(const Registry& other) {
    if (this != &other) {
        Registry copy(other);
        std::unique_lock lock(mutex_);
        units_ = std::move(copy.units_);
        classifications_ = std::move(copy.classifications_);
        cvts_ = std::move(copy.cvts_);
        mets_ = std::move(copy.mets_);
    }
    return *this;
}

void Registry::define_unit(const Unit& unit) {
    if (unit.symbol.empty()) {
        throw Error(Errc::InvalidDefinition, "unit symbol must be non-empty");
    }
    std::unique_lock lock(mutex_);
    if (units_.contains(unit.symbol)) {
        throw Error(Errc::DuplicateId, "unit '" + unit.symbol + "' already defined");
    }
    units_.emplace(unit.symbol, unit);
}

void Registry::define_classification(const Classification& classification) {
    if (classification.name.empty()) {
        throw Error(Errc::InvalidDefinition, "classification name must be non-empty");
    }
    if (classification.items.size() < 2) {
        throw Error(Errc::InvalidDefinition,
                    "classification '" + classification.name + "' needs at least two items");
    }
    std::set<std::string> distinct;
    for (const auto& item : classification.items) {
        if (item.empty() || !distinct.insert(item).second) {
            throw Error(Errc::InvalidDefinition,
                        "classification '" + classification.name + "' items must be distinct and non-empty");
        }
    }
    std::unique_lock lock(mutex_);
    auto it = classifications_.find(classification.name);
    if (it == classifications_.end()) {
        classifications_.emplace(classification.name, classification);
        return;
    }
    for (const auto& old : it->second.items) {
        if (!distinct.contains(old)) {
            throw Error(Errc::ShrinkingMemberSet,
                        "classification '" + classification.name + "' would lose item '" + old + "'");
        }
    }
    if (distinct.size() == it->second.items.size()) {
        throw Error(Errc::DuplicateId, "classification '" + classification.name + "' already defined");
    }
    it->second = classification;
}

std::string Registry::define_cvt(const ClinicalVariableType& cvt) {
    if (cvt.id.empty() || cvt.name.empty()) {
        throw Error(Errc::InvalidDefinition, "CVT id and name must be non-empty");
    }
    const bool wants_unit = cvt.category == VariableCategory::Measurement;
    const bool wants_classification = cvt.category == VariableCategory::ObservationByClassification;
    if (wants_unit && !cvt.unit) {
        throw Error(Errc::MissingUnit, "measurement CVT '" + cvt.id + "' has no unit");
    }
    if (wants_classification && !cvt.classification) {
        throw Error(Errc::MissingClassification, "classification CVT '" + cvt.id + "' has no classification");
    }
    if ((!wants_unit && cvt.unit) || (!wants_classification && cvt.classification)) {
        throw Error(Errc::InvalidDefinition,
                    "CVT '" + cvt.id + "' carries a unit or classification its category does not use");
    }
    std::unique_lock lock(mutex_);
    if (cvts_.contains(cvt.id)) {
        throw Error(Errc::DuplicateId, "CVT '" + cvt.id + "' already defined");
    }
    if (cvt.unit && !units_.contains(*cvt.unit)) {
        throw Error(Errc::DanglingReference, "CVT '" + cvt.id + "' references unknown unit '" + *cvt.unit + "'");
    }
    if (cvt.classification && !classifications_.contains(*cvt.classification)) {
        throw Error(Errc::DanglingReference,
                    "CVT '" + cvt.id + "' references unknown classification '" + *cvt.classification + "'");
    }
    cvts_.emplace(cvt.id, cvt);
    return cvt.id;
}

std::string Registry::define_met(const MedicalEventType& met) {
    if (met.id.empty()) {
        throw Error(Errc::InvalidDefinition, "MET id must be non-empty");
    }
    if (met.member_cvts.empty()) {
        throw Error(Errc::InvalidDefinition, "MET '" + met.id + "' needs at least one member CVT");
    }
    std::unique_lock lock(mutex_);
    for (const auto& member : met.member_cvts) {
        if (!cvts_.contains(member)) {
            throw Error(Errc::UnknownCVT, "MET '" + met.id + "' references unknown CVT '" + member + "'");
        }
    }
    auto it = mets_.find(met.id);
    if (it == mets_.end()) {
        mets_.emplace(met.id, met);
        return met.id;
    }
    auto& existing = it->second;
    if (!std::includes(met.member_cvts.begin(), met.member_cvts.end(), existing.member_cvts.begin(),
                       existing.member_cvts.end())) {
        throw Error(Errc::ShrinkingMemberSet, "redefinition of MET '" + met.id + "' drops member CVTs");
    }
    if (met.member_cvts.size() == existing.member_cvts.size()) {
        throw Error(Errc::DuplicateId, "MET '" + met.id + "' already defined");
    }
    if (met.vertical_level != existing.vertical_level) {
        throw Error(Errc::InvalidDefinition, "redefinition of MET '" + met.id + "' changes its vertical level");
    }
    existing.member_cvts = met.member_cvts;
    if (!met.name.empty()) {
        existing.name = met.name;
    }
    return met.id;
}

void Registry::merge(const Registry& other) {
    const Registry snapshot(other);
    for (const auto& [symbol, unit] : snapshot.units_) {
        if (auto mine = find_unit(symbol); !mine) {
            define_unit(unit);
        } else if (!(*mine == unit)) {
            throw Error(Errc::DuplicateId, "unit '" + symbol + "' redefined differently");
        }
    }
    for (const auto& [name, classification] : snapshot.classifications_) {
        auto mine = find_classification(name);
        if (!mine || mine->items != classification.items) {
            define_classification(classification);
        }
    }
    for (const auto& [id, cvt] : snapshot.cvts_) {
        if (auto mine = find_cvt(id); !mine) {
            define_cvt(cvt);
        } else if (!(*mine == cvt)) {
            throw Error(Errc::DuplicateId, "CVT '" + id + "' redefined differently");
        }
    }
    for (const auto& [id, met] : snapshot.mets_) {
        auto mine = find_met(id);
        if (!mine || mine->member_cvts != met.member_cvts) {
            define_met(met);
        }
    }
}

std::optional<Unit> Registry::find_unit(std::string_view symbol) const {
    std::shared_lock lock(mutex_);
    auto it = units_.find(symbol);
    return it == units_.end() ? std::nullopt : std::optional(it->second);
}

std::optional<Classification> Registry::find_classification(std::string_view name) const {
    std::shared_lock lock(mutex_);
    auto it = classifications_.find(name);
    return it == classifications_.end() ? std::nullopt : std::optional(it->second);
}

std::optional<ClinicalVariableType> Registry::find_cvt(std::string_view id) const {
    std::shared_lock lock(mutex_);
    auto it = cvts_.find(id);
    return it == cvts_.end() ? std::nullopt : std::optional(it->second);
}

std::optional<ClinicalVariableType> Registry::find_cvt_by_name(std::string_view name) const {
    std::shared_lock lock(mutex_);
    for (const auto& [id, cvt] : cvts_) {
        if (cvt.name == name) {
            return cvt;
        }
    }
    return std::nullopt;
}

std::optional<MedicalEventType> Registry::find_met(std::string_view id) const {
    std::shared_lock lock(mutex_);
    auto it = mets_.find(id);
    return it == mets_.end() ? std::nullopt : std::optional(it->second);
}

bool Registry::has_cvt(std::string_view id) const {
    std::shared_lock lock(mutex_);
    return cvts_.find(id) != cvts_.end();
}

bool Registry::has_met(std::string_view id) const {
    std::shared_lock lock(mutex_);
    return mets_.find(id) != mets_.end();
}

namespace {

template <typename Map>
auto values_of(const Map& map) {
    std::vector<typename Map::mapped_type> out;
    out.reserve(map.size());
    for (const auto& [key, value] : map) {
        out.push_back(value);
    }
    return out;
}

bool looks_like_concept_uri(std::string_view uri) {
    const auto colon = uri.find(':');
    return colon != std::string_view::npos && colon > 0 && colon + 1 < uri.size() &&
           uri.find_first_of(" \t\r\n") == std::string_view::npos;
}

} // namespace

std::vector<Unit> Registry::units() const {
    std::shared_lock lock(mutex_);
    return values_of(units_);
}

std::vector<Classification> Registry::classifications() const {
    std::shared_lock lock(mutex_);
    return values_of(classifications_);
}

std::vector<ClinicalVariableType> Registry::cvts() const {
    std::shared_lock lock(mutex_);
    return values_of(cvts_);
}

std::vector<MedicalEventType> Registry::mets() const {
    std::shared_lock lock(mutex_);
    return values_of(mets_);
}

ValidationReport Registry::validate_variable(const ClinicalVariable& cv, std::string_view met_id,
                                             const ConceptResolver& concepts) const {
    ValidationReport report;
    auto add = [&report](ViolationCode code, std::string detail) {
        report.violations.push_back({code, std::move(detail)});
    };

    std::shared_lock lock(mutex_);

    auto met = mets_.find(met_id);
    if (met == mets_.end()) {
        add(ViolationCode::EventTypeMismatch, "unknown event type '" + std::string(met_id) + "'");
    } else if (!met->second.member_cvts.contains(cv.cvt_id)) {
        add(ViolationCode::EventTypeMismatch,
            "CVT '" + cv.cvt_id + "' is not a member of event type '" + std::string(met_id) + "'");
    }

    auto cvt_it = cvts_.find(cv.cvt_id);
    if (cvt_it == cvts_.end()) {
        add(ViolationCode::UnknownType, "no CVT '" + cv.cvt_id + "' is defined");
        return report;
    }
    const auto& cvt = cvt_it->second;

    if (category_of(cv.payload) != cvt.category) {
        add(ViolationCode::CategoryMismatch, "CVT '" + cvt.id + "' expects " +
                                                 std::string(to_string(cvt.category)) + ", got " +
                                                 std::string(to_string(category_of(cv.payload))));
        return report;
    }

    if (const auto* m = std::get_if<Measurement>(&cv.payload)) {
        if (!cvt.unit || m->unit() != *cvt.unit) {
            add(ViolationCode::UnitMismatch,
                "unit '" + m->unit() + "' differs from '" + cvt.unit.value_or("") + "'");
        }
    } else if (const auto* o = std::get_if<ObservationByClassification>(&cv.payload)) {
        auto cls = cvt.classification ? classifications_.find(*cvt.classification) : classifications_.end();
        if (cls == classifications_.end() || o->item.empty()) {
            add(ViolationCode::MissingClassification,
                o->item.empty() ? "no classification item selected"
                                : "classification '" + cvt.classification.value_or("") + "' is not registered");
        } else {
            const auto& items = cls->second.items;
            if (std::find(items.begin(), items.end(), o->item) == items.end()) {
                add(ViolationCode::ValueNotInClassification,
                    "'" + o->item + "' is not an item of '" + cls->second.name + "'");
            }
        }
    } else if (const auto* c = std::get_if<MedicalConceptInstance>(&cv.payload)) {
        const bool known = concepts ? concepts(c->concept_uri) : looks_like_concept_uri(c->concept_uri);
        if (!known) {
            add(ViolationCode::UnknownConceptURI, "unknown concept '" + c->concept_uri + "'");
        }
    }
    return report;
}

// =============================================================================
// Serialization
// =============================================================================

std::string Registry::serialize() const {
    std::shared_lock lock(mutex_);
    json doc = json::object();
    doc["units"] = json::array();
    for (const auto& [symbol, unit] : units_) {
        json j{{"symbol", unit.symbol}};
        if (unit.description) {
            j["description"] = *unit.description;
        }
        doc["units"].push_back(std::move(j));
    }
    doc["classifications"] = json::array();
    for (const auto& [name, cls] : classifications_) {
        doc["classifications"].push_back(json{{"name", cls.name}, {"items", cls.items}});
    }
    doc["cvts"] = json::array();
    for (const auto& [id, cvt] : cvts_) {
        json j{{"id", cvt.id},
               {"name", cvt.name},
               {"category", std::string(to_string(cvt.category))},
               {"vertical_level", std::string(to_string(cvt.vertical_level))}};
        if (cvt.unit) {
            j["unit"] = *cvt.unit;
        }
        if (cvt.classification) {
            j["classification"] = *cvt.classification;
        }
        doc["cvts"].push_back(std::move(j));
    }
    doc["mets"] = json::array();
    for (const auto& [id, met] : mets_) {
        doc["mets"].push_back(json{{"id", met.id},
                                   {"name", met.name},
                                   {"member_cvts", met.member_cvts},
                                   {"vertical_level", std::string(to_string(met.vertical_level))}});
    }
    return doc.dump(2) + "\n";
}

namespace {

VerticalLevel level_field(const json& j) {
    if (!j.contains("vertical_level")) {
        return VerticalLevel::Body;
    }
    auto level = parse_vertical_level(j.at("vertical_level").get<std::string>());
    if (!level) {
        throw Error(Errc::MalformedRecord, "unknown vertical level " + j.at("vertical_level").dump());
    }
    return *level;
}

std::optional<std::string> optional_string(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) {
        return std::nullopt;
    }
    return j.at(key).get<std::string>();
}

} // namespace

Registry Registry::parse(std::string_view json_text) {
    Registry registry;
    try {
        const json doc = json::parse(json_text);
        auto array = [&doc](const char* key) {
            return doc.contains(key) ? doc.at(key) : json::array();
        };
        for (const auto& j : array("units")) {
            registry.define_unit(Unit{j.at("symbol").get<std::string>(), optional_string(j, "description")});
        }
        for (const auto& j : array("classifications")) {
            registry.define_classification(
                Classification{j.at("name").get<std::string>(), j.at("items").get<std::vector<std::string>>()});
        }
        for (const auto& j : array("cvts")) {
            auto category = parse_variable_category(j.at("category").get<std::string>());
            if (!category) {
                throw Error(Errc::MalformedRecord, "unknown category " + j.at("category").dump());
            }
            registry.define_cvt(ClinicalVariableType{j.at("id").get<std::string>(),
                                                     j.value("name", std::string{}), *category,
                                                     optional_string(j, "unit"),
                                                     optional_string(j, "classification"), level_field(j)});
        }
        for (const auto& j : array("mets")) {
            registry.define_met(MedicalEventType{j.at("id").get<std::string>(), j.value("name", std::string{}),
                                                 j.at("member_cvts").get<std::set<std::string>>(),
                                                 level_field(j)});
        }
    } catch (const json::exception& e) {
        throw Error(Errc::MalformedRecord, std::string("registry document: ") + e.what());
    }
    return registry;
}

void Registry::save(const std::filesystem::path& path) const {
    write_text_file(path, serialize());
}

Registry Registry::load(const std::filesystem::path& path) {
    return parse(read_text_file(path));
}

} // namespace hec
