// Shared test fixtures: the worked clinical examples used across suites.

#ifndef HEC_TESTS_FIXTURES_HPP
#define HEC_TESTS_FIXTURES_HPP

#include "hec/ontology.hpp"
#include "hec/registry.hpp"
#include "hec/store.hpp"

#include <memory>
#include <string>

namespace hec::testing {

inline Date d(const char* iso) {
    return Date::parse_or_throw(iso);
}

// SysLVol (Measurement, mL/m²), RVDilation (Severity classification),
// TumourLoc (concept instance) and an imaging annotation CVT.
inline Registry clinical_registry() {
    Registry r;
    r.define_unit(Unit{"mL/m²", "millilitres per square metre"});
    r.define_classification(Classification{"Severity", {"No", "Mild", "Moderate", "Severe"}});
    r.define_cvt({"SysLVol", "Systolic LV volume", VariableCategory::Measurement, "mL/m²", std::nullopt,
                  VerticalLevel::Organ});
    r.define_cvt({"RVDilation", "RV dilation", VariableCategory::ObservationByClassification, std::nullopt,
                  "Severity", VerticalLevel::Organ});
    r.define_cvt({"TumourLoc", "Tumour Location", VariableCategory::MedicalConceptInstance, std::nullopt,
                  std::nullopt, VerticalLevel::Organ});
    r.define_met({"CardiacMRI", "Cardiac MRI examination", {"SysLVol", "RVDilation"}, VerticalLevel::Organ});
    r.define_met({"TumourAssessment", "Tumour assessment", {"TumourLoc"}, VerticalLevel::Organ});
    return r;
}

inline ClinicalVariable sys_lv_volume(const char* value = "30.5") {
    return {"", "SysLVol", Measurement(Decimal::parse_or_throw(value), "mL/m²")};
}

inline ClinicalVariable rv_dilation(const char* item = "Severe") {
    return {"", "RVDilation", ObservationByClassification{item}};
}

inline ClinicalVariable tumour_location(const char* uri = "fma:Cerebellum") {
    return {"", "TumourLoc", MedicalConceptInstance{uri}};
}

inline PatientRecord patient(const char* pseudonym, const char* birth = "2000-01-01") {
    return PatientRecord{pseudonym, Sex::Unknown, d(birth), {}, {}};
}

inline Visit visit(const char* id, const char* pseudonym, const char* date,
                   VisitPurposeKind purpose = VisitPurposeKind::Baseline) {
    return Visit{id, pseudonym, VisitPurpose{purpose, {}}, d(date), {}};
}

inline MedicalEvent event(std::string id, std::string met, std::string visit_id, TimeRef time,
                          std::vector<ClinicalVariable> variables = {}) {
    MedicalEvent e;
    e.event_id = std::move(id);
    e.event_type = std::move(met);
    e.visit = std::move(visit_id);
    e.time = std::move(time);
    e.variables = std::move(variables);
    e.kind = EventKind{EventKindTag::Examination, {}};
    return e;
}

// X-ray imaging annotated with an anatomical concept, for the Jaw/teeth query.
inline Registry xray_registry() {
    Registry r;
    r.define_cvt({"ImageLoc", "Imaged anatomy", VariableCategory::MedicalConceptInstance, std::nullopt,
                  std::nullopt, VerticalLevel::Organ});
    r.define_met({"XRayImaging", "X-ray imaging", {"ImageLoc"}, VerticalLevel::Organ});
    return r;
}

inline Ontology jaw_ontology() {
    Ontology o;
    o.add_concept({"hec:Jaw", "Jaw", ConceptGroup::Anatomical});
    o.add_concept({"hec:Tooth", "Tooth", ConceptGroup::Anatomical});
    o.add_concept({"fma:Brain", "Brain", ConceptGroup::Anatomical});
    o.add_concept({"fma:Cerebellum", "Cerebellum", ConceptGroup::Anatomical});
    o.add_relation({"hec:Tooth", Predicate::part_of, "hec:Jaw"});
    o.add_relation({"fma:Cerebellum", Predicate::regional_part_of, "fma:Brain"});
    return o;
}

// One Jaw-annotated and one Tooth-annotated X-ray event.
inline std::unique_ptr<NodeStore> jaw_store(const Ontology& ontology, std::string node_id = "local") {
    auto store = std::make_unique<NodeStore>(std::move(node_id), xray_registry());
    store->set_concept_resolver(ontology.resolver());
    store->add_patient(patient("P-jaw", "2004-03-01"));
    store->add_patient(patient("P-tooth", "2006-07-15"));
    store->add_visit(visit("V1", "P-jaw", "2012-05-10"));
    store->add_visit(visit("V2", "P-tooth", "2013-02-20"));
    store->record_event(event("X1", "XRayImaging", "V1", Instant{d("2012-05-10")},
                              {{"", "ImageLoc", MedicalConceptInstance{"hec:Jaw"}}}));
    store->record_event(event("X2", "XRayImaging", "V2", Instant{d("2013-02-20")},
                              {{"", "ImageLoc", MedicalConceptInstance{"hec:Tooth"}}}));
    return store;
}

} // namespace hec::testing

#endif // HEC_TESTS_FIXTURES_HPP
