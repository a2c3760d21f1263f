#include "json_codec.hpp"

#include "hec/error.hpp"

namespace hec::codec {

namespace {

[[noreturn]] void malformed(const std::string& what) {
    throw Error(Errc::MalformedRecord, what);
}

Date date_field(const json& j, const char* key) {
    auto d = Date::parse(j.at(key).get<std::string>());
    if (!d) {
        malformed(std::string("bad date in field '") + key + "'");
    }
    return *d;
}

template <typename T, typename Parse>
T enum_field(const json& j, const char* key, Parse parse) {
    auto v = parse(j.at(key).get<std::string>());
    if (!v) {
        malformed(std::string("bad value in field '") + key + "': " + j.at(key).dump());
    }
    return *v;
}

template <typename F>
auto guarded(const char* what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        malformed(std::string(what) + ": " + e.what());
    }
}

} // namespace

json to_json(const PatientRecord& patient) {
    json demographics = json::array();
    for (const auto& [k, v] : patient.demographics) {
        demographics.push_back(json::array({k, v}));
    }
    return json{{"pseudonym", patient.pseudonym},
                {"sex", std::string(to_string(patient.sex))},
                {"birth_date", patient.birth_date.to_string()},
                {"demographics", demographics},
                {"family_history", patient.family_history}};
}

PatientRecord patient_from_json(const json& j) {
    return guarded("patient record", [&] {
        PatientRecord p;
        p.pseudonym = j.at("pseudonym").get<std::string>();
        p.sex = enum_field<Sex>(j, "sex", parse_sex);
        p.birth_date = date_field(j, "birth_date");
        for (const auto& pair : j.value("demographics", json::array())) {
            p.demographics.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
        }
        p.family_history = j.value("family_history", std::string{});
        return p;
    });
}

json to_json(const Visit& visit) {
    return json{{"visit_id", visit.visit_id},
                {"patient", visit.patient},
                {"purpose", to_string(visit.purpose)},
                {"date", visit.date.to_string()},
                {"events", visit.events}};
}

Visit visit_from_json(const json& j) {
    return guarded("visit record", [&] {
        Visit v;
        v.visit_id = j.at("visit_id").get<std::string>();
        v.patient = j.at("patient").get<std::string>();
        v.purpose = enum_field<VisitPurpose>(j, "purpose", parse_visit_purpose);
        v.date = date_field(j, "date");
        v.events = j.value("events", std::vector<std::string>{});
        return v;
    });
}

json to_json(const TimeRef& time) {
    struct Visitor {
        json operator()(const Instant& i) const { return json{{"form", "Instant"}, {"date", i.date.to_string()}}; }
        json operator()(const Interval& i) const {
            return json{{"form", "Interval"}, {"start", i.start().to_string()}, {"end", i.end().to_string()}};
        }
        json operator()(const RelativeTo& r) const {
            json j{{"form", "RelativeTo"},
                   {"anchor_event", r.anchor_event},
                   {"relation", std::string(to_string(r.relation))}};
            if (r.offset_days) {
                j["offset_days"] = *r.offset_days;
            }
            return j;
        }
    };
    return std::visit(Visitor{}, time);
}

TimeRef time_from_json(const json& j) {
    return guarded("time reference", [&]() -> TimeRef {
        const auto form = j.at("form").get<std::string>();
        if (form == "Instant") {
            return Instant{date_field(j, "date")};
        }
        if (form == "Interval") {
            return Interval(date_field(j, "start"), date_field(j, "end"));
        }
        if (form == "RelativeTo") {
            RelativeTo r;
            r.anchor_event = j.at("anchor_event").get<std::string>();
            r.relation = enum_field<TemporalRelation>(j, "relation", parse_temporal_relation);
            if (j.contains("offset_days")) {
                r.offset_days = j.at("offset_days").get<int>();
            }
            return r;
        }
        malformed("unknown time form '" + form + "'");
    });
}

json to_json(const ClinicalVariable& variable) {
    json j{{"id", variable.id},
           {"cvt_id", variable.cvt_id},
           {"category", std::string(to_string(category_of(variable.payload)))}};
    struct Visitor {
        json& j;
        void operator()(const Measurement& m) const {
            j["value"] = m.value().to_string();
            j["unit"] = m.unit();
        }
        void operator()(const Annotation& a) const {
            j["text"] = a.text;
            if (a.attached_to) {
                j["attached_to"] = *a.attached_to;
            }
        }
        void operator()(const ObservationByClassification& o) const { j["item"] = o.item; }
        void operator()(const DicomData& d) const {
            json tags = json::array();
            for (const auto& [tag, value] : d.tags) {
                tags.push_back(json::array({tag.to_string(), value}));
            }
            j["tags"] = tags;
        }
        void operator()(const DicomSeries& s) const {
            j["members"] = s.members;
            j["study_id"] = s.study_id;
            j["series_id"] = s.series_id;
        }
        void operator()(const ExternalResource& r) const { j["uri"] = r.uri; }
        void operator()(const MedicalConceptInstance& c) const { j["concept_uri"] = c.concept_uri; }
    };
    std::visit(Visitor{j}, variable.payload);
    return j;
}

ClinicalVariable variable_from_json(const json& j) {
    return guarded("clinical variable", [&] {
        ClinicalVariable v;
        v.id = j.value("id", std::string{});
        v.cvt_id = j.at("cvt_id").get<std::string>();
        const auto category = enum_field<VariableCategory>(j, "category", parse_variable_category);
        switch (category) {
        case VariableCategory::Measurement: {
            auto value = Decimal::parse(j.at("value").get<std::string>());
            if (!value) {
                malformed("bad measurement value " + j.at("value").dump());
            }
            v.payload = Measurement(*value, j.at("unit").get<std::string>());
            break;
        }
        case VariableCategory::Annotation: {
            Annotation a{j.at("text").get<std::string>(), std::nullopt};
            if (j.contains("attached_to")) {
                a.attached_to = j.at("attached_to").get<std::string>();
            }
            v.payload = a;
            break;
        }
        case VariableCategory::ObservationByClassification:
            v.payload = ObservationByClassification{j.at("item").get<std::string>()};
            break;
        case VariableCategory::DICOMData: {
            DicomData d;
            for (const auto& pair : j.at("tags")) {
                auto tag = DicomTag::parse(pair.at(0).get<std::string>());
                if (!tag) {
                    malformed("bad DICOM tag " + pair.at(0).dump());
                }
                d.tags.emplace_back(*tag, pair.at(1).get<std::string>());
            }
            v.payload = d;
            break;
        }
        case VariableCategory::DICOMSeries:
            v.payload = DicomSeries{j.at("members").get<std::vector<std::string>>(),
                                    j.at("study_id").get<std::string>(), j.at("series_id").get<std::string>()};
            break;
        case VariableCategory::ExternalResource:
            v.payload = ExternalResource{j.at("uri").get<std::string>()};
            break;
        case VariableCategory::MedicalConceptInstance:
            v.payload = MedicalConceptInstance{j.at("concept_uri").get<std::string>()};
            break;
        }
        return v;
    });
}

json to_json(const MedicalEvent& event) {
    json variables = json::array();
    for (const auto& v : event.variables) {
        variables.push_back(to_json(v));
    }
    return json{{"event_id", event.event_id},
                {"event_type", event.event_type},
                {"visit", event.visit},
                {"kind", to_string(event.kind)},
                {"time", to_json(event.time)},
                {"variables", variables}};
}

MedicalEvent event_from_json(const json& j) {
    return guarded("medical event", [&] {
        MedicalEvent e;
        e.event_id = j.at("event_id").get<std::string>();
        e.event_type = j.at("event_type").get<std::string>();
        e.visit = j.at("visit").get<std::string>();
        e.kind = enum_field<EventKind>(j, "kind", parse_event_kind);
        e.time = time_from_json(j.at("time"));
        for (const auto& v : j.at("variables")) {
            e.variables.push_back(variable_from_json(v));
        }
        return e;
    });
}

} // namespace hec::codec
