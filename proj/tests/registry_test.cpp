#include "hec/registry.hpp"

#include "hec/error.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <random>

namespace hec {
namespace {

Errc code_of(auto&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return Errc::IoError;
}

TEST(Registry, ClinicalDefinitionsAreRetrievable) {
    auto r = testing::clinical_registry();
    auto sys = r.find_cvt("SysLVol");
    ASSERT_TRUE(sys);
    EXPECT_EQ(sys->name, "Systolic LV volume");
    EXPECT_EQ(sys->unit, "mL/m²");
    auto by_name = r.find_cvt_by_name("RV dilation");
    ASSERT_TRUE(by_name);
    EXPECT_EQ(by_name->id, "RVDilation");
    auto met = r.find_met("CardiacMRI");
    ASSERT_TRUE(met);
    EXPECT_EQ(met->member_cvts, (std::set<std::string>{"RVDilation", "SysLVol"}));
}

TEST(Registry, ClassificationCvtWithoutClassification) {
    auto r = testing::clinical_registry();
    EXPECT_EQ(code_of([&] {
                  r.define_cvt({"Bad", "Bad", VariableCategory::ObservationByClassification, std::nullopt,
                                std::nullopt, VerticalLevel::Organ});
              }),
              Errc::MissingClassification);
    EXPECT_EQ(code_of([&] {
                  r.define_cvt({"Bad", "Bad", VariableCategory::Measurement, std::nullopt, std::nullopt,
                                VerticalLevel::Organ});
              }),
              Errc::MissingUnit);
    EXPECT_EQ(code_of([&] {
                  r.define_cvt({"Bad", "Bad", VariableCategory::Measurement, "furlong", std::nullopt,
                                VerticalLevel::Organ});
              }),
              Errc::DanglingReference);
    EXPECT_EQ(code_of([&] {
                  r.define_cvt({"SysLVol", "again", VariableCategory::Annotation, std::nullopt, std::nullopt,
                                VerticalLevel::Organ});
              }),
              Errc::DuplicateId);
    EXPECT_EQ(code_of([&] {
                  r.define_cvt({"Nameless", "", VariableCategory::Annotation, std::nullopt, std::nullopt,
                                VerticalLevel::Organ});
              }),
              Errc::InvalidDefinition);
}

TEST(Registry, MetEvolutionIsMonotone) {
    auto r = testing::clinical_registry();
    EXPECT_EQ(code_of([&] { r.define_met({"Empty", "Empty", {}, VerticalLevel::Organ}); }),
              Errc::InvalidDefinition);
    EXPECT_EQ(code_of([&] { r.define_met({"CardiacMRI", "", {"SysLVol"}, VerticalLevel::Organ}); }),
              Errc::ShrinkingMemberSet);
    EXPECT_EQ(code_of([&] { r.define_met({"X", "", {"Ghost"}, VerticalLevel::Organ}); }), Errc::UnknownCVT);

    r.define_cvt({"LVEF", "LV ejection fraction", VariableCategory::Measurement, "mL/m²", std::nullopt,
                  VerticalLevel::Organ});
    r.define_met({"CardiacMRI", "", {"SysLVol", "RVDilation", "LVEF"}, VerticalLevel::Organ});
    EXPECT_EQ(r.find_met("CardiacMRI")->member_cvts.size(), 3u);
    EXPECT_EQ(r.find_met("CardiacMRI")->name, "Cardiac MRI examination");
}

TEST(Registry, ClassificationsOnlyGainItems) {
    auto r = testing::clinical_registry();
    EXPECT_EQ(code_of([&] { r.define_classification({"Severity", {"No", "Severe"}}); }),
              Errc::ShrinkingMemberSet);
    EXPECT_EQ(code_of([&] { r.define_classification({"Severity", {"No", "Mild", "Moderate", "Severe"}}); }),
              Errc::DuplicateId);
    EXPECT_EQ(code_of([&] { r.define_classification({"Solo", {"Only"}}); }), Errc::InvalidDefinition);
    EXPECT_EQ(code_of([&] { r.define_classification({"Dup", {"A", "A"}}); }), Errc::InvalidDefinition);
    r.define_classification({"Severity", {"No", "Mild", "Moderate", "Severe", "Extreme"}});
    EXPECT_EQ(r.find_classification("Severity")->items.size(), 5u);
}

TEST(Registry, ValidatesClinicalVariables) {
    auto r = testing::clinical_registry();
    EXPECT_TRUE(r.validate_variable(testing::sys_lv_volume(), "CardiacMRI").valid());
    EXPECT_TRUE(r.validate_variable(testing::rv_dilation("Severe"), "CardiacMRI").valid());
    EXPECT_TRUE(r.validate_variable(testing::tumour_location(), "TumourAssessment").valid());

    auto bad = r.validate_variable(testing::rv_dilation("Catastrophic"), "CardiacMRI");
    EXPECT_FALSE(bad.valid());
    EXPECT_TRUE(bad.has(ViolationCode::ValueNotInClassification));

    ClinicalVariable ghost{"", "Ghost", ObservationByClassification{"x"}};
    EXPECT_TRUE(r.validate_variable(ghost, "CardiacMRI").has(ViolationCode::UnknownType));

    ClinicalVariable wrong_unit{"", "SysLVol", Measurement(Decimal::from_int(30), "mL")};
    EXPECT_TRUE(r.validate_variable(wrong_unit, "CardiacMRI").has(ViolationCode::UnitMismatch));

    ClinicalVariable wrong_category{"", "SysLVol", ObservationByClassification{"Severe"}};
    EXPECT_TRUE(r.validate_variable(wrong_category, "CardiacMRI").has(ViolationCode::CategoryMismatch));

    EXPECT_TRUE(r.validate_variable(testing::tumour_location(), "CardiacMRI")
                    .has(ViolationCode::EventTypeMismatch));

    ConceptResolver only_brain = [](std::string_view uri) { return uri == "fma:Brain"; };
    EXPECT_TRUE(r.validate_variable(testing::tumour_location(), "TumourAssessment", only_brain)
                    .has(ViolationCode::UnknownConceptURI));
    EXPECT_TRUE(r.validate_variable(testing::tumour_location("not a uri"), "TumourAssessment")
                    .has(ViolationCode::UnknownConceptURI));
}

TEST(Registry, ReportsEveryViolationWithoutShortCircuit) {
    auto r = testing::clinical_registry();
    auto report = r.validate_variable(testing::rv_dilation("Catastrophic"), "TumourAssessment");
    EXPECT_TRUE(report.has(ViolationCode::ValueNotInClassification));
    EXPECT_TRUE(report.has(ViolationCode::EventTypeMismatch));
    EXPECT_EQ(report.violations.size(), 2u);
}

TEST(Registry, SerializationRoundTripIsByteIdentical) {
    auto r = testing::clinical_registry();
    const auto text = r.serialize();
    auto back = Registry::parse(text);
    EXPECT_EQ(back.serialize(), text);
    EXPECT_NE(text.find("\"mL/m²\""), std::string::npos);
    EXPECT_NE(text.find("\"units\""), std::string::npos);
    EXPECT_NE(text.find("\"mets\""), std::string::npos);
}

TEST(Registry, ParseAcceptsClassificationSynonym) {
    auto r = Registry::parse(R"({
        "units": [],
        "classifications": [{"name": "Severity", "items": ["No", "Mild", "Moderate", "Severe"]}],
        "cvts": [{"id": "RVDilation", "name": "RV dilation", "category": "Classification",
                  "classification": "Severity"}],
        "mets": []})");
    EXPECT_EQ(r.find_cvt("RVDilation")->category, VariableCategory::ObservationByClassification);
    EXPECT_EQ(code_of([] { Registry::parse("{not json"); }), Errc::MalformedRecord);
}

TEST(Registry, MergeAppliesMonotoneEvolution) {
    auto base = testing::clinical_registry();
    auto extension = testing::clinical_registry();
    extension.define_classification({"Severity", {"No", "Mild", "Moderate", "Severe", "Extreme"}});
    extension.define_cvt({"Note", "Note", VariableCategory::Annotation, std::nullopt, std::nullopt,
                          VerticalLevel::Body});
    extension.define_met({"CardiacMRI", "", {"SysLVol", "RVDilation", "Note"}, VerticalLevel::Organ});
    base.merge(extension);
    EXPECT_EQ(base.serialize(), extension.serialize());
}

// Brute-force oracle over randomly generated registries and variables: the
// expected violation set is computed directly from the definitions.
TEST(Registry, ValidationAgreesWithBruteForceOracle) {
    std::mt19937 rng(2024);
    auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

    for (int round = 0; round < 50; ++round) {
        Registry r;
        std::vector<std::string> units{"u0", "u1", "u2"};
        for (const auto& u : units) {
            r.define_unit({u, std::nullopt});
        }
        std::vector<Classification> classes{{"C0", {"a", "b"}}, {"C1", {"a", "c", "d"}}};
        for (const auto& c : classes) {
            r.define_classification(c);
        }
        std::vector<ClinicalVariableType> cvts;
        for (int i = 0; i < 8; ++i) {
            ClinicalVariableType t;
            t.id = "T" + std::to_string(i);
            t.name = t.id;
            t.category = static_cast<VariableCategory>(pick(7));
            if (t.category == VariableCategory::Measurement) {
                t.unit = units[pick(units.size())];
            }
            if (t.category == VariableCategory::ObservationByClassification) {
                t.classification = classes[pick(classes.size())].name;
            }
            r.define_cvt(t);
            cvts.push_back(t);
        }
        std::set<std::string> members;
        for (const auto& t : cvts) {
            if (pick(2) == 0) {
                members.insert(t.id);
            }
        }
        members.insert("T0");
        r.define_met({"M", "M", members, VerticalLevel::Organ});

        for (int k = 0; k < 40; ++k) {
            ClinicalVariable cv;
            cv.cvt_id = pick(10) == 0 ? "Ghost" : cvts[pick(cvts.size())].id;
            const auto category = static_cast<VariableCategory>(pick(7));
            switch (category) {
            case VariableCategory::Measurement:
                cv.payload = Measurement(Decimal::from_int(1), pick(4) == 0 ? "zz" : units[pick(units.size())]);
                break;
            case VariableCategory::Annotation: cv.payload = Annotation{"t", std::nullopt}; break;
            case VariableCategory::ObservationByClassification: {
                const char* items[] = {"a", "b", "c", "d", "", "q"};
                cv.payload = ObservationByClassification{items[pick(6)]};
                break;
            }
            case VariableCategory::DICOMData: cv.payload = DicomData{}; break;
            case VariableCategory::DICOMSeries: cv.payload = DicomSeries{}; break;
            case VariableCategory::ExternalResource: cv.payload = ExternalResource{"x"}; break;
            case VariableCategory::MedicalConceptInstance:
                cv.payload = MedicalConceptInstance{pick(2) ? "fma:Brain" : "bogus"};
                break;
            }
            const std::string met = pick(8) == 0 ? "Unknown" : "M";

            std::set<ViolationCode> expected;
            if (met != "M" || !members.contains(cv.cvt_id)) {
                expected.insert(ViolationCode::EventTypeMismatch);
            }
            const ClinicalVariableType* t = nullptr;
            for (const auto& c : cvts) {
                if (c.id == cv.cvt_id) {
                    t = &c;
                }
            }
            if (t == nullptr) {
                expected.insert(ViolationCode::UnknownType);
            } else if (t->category != category) {
                expected.insert(ViolationCode::CategoryMismatch);
            } else if (category == VariableCategory::Measurement) {
                if (std::get<Measurement>(cv.payload).unit() != *t->unit) {
                    expected.insert(ViolationCode::UnitMismatch);
                }
            } else if (category == VariableCategory::ObservationByClassification) {
                const auto& item = std::get<ObservationByClassification>(cv.payload).item;
                const auto& cls = *std::find_if(classes.begin(), classes.end(),
                                                [&](const Classification& c) { return c.name == *t->classification; });
                if (item.empty()) {
                    expected.insert(ViolationCode::MissingClassification);
                } else if (std::find(cls.items.begin(), cls.items.end(), item) == cls.items.end()) {
                    expected.insert(ViolationCode::ValueNotInClassification);
                }
            } else if (category == VariableCategory::MedicalConceptInstance) {
                if (std::get<MedicalConceptInstance>(cv.payload).concept_uri == "bogus") {
                    expected.insert(ViolationCode::UnknownConceptURI);
                }
            }

            const auto report = r.validate_variable(cv, met);
            std::set<ViolationCode> actual;
            for (const auto& v : report.violations) {
                actual.insert(v.code);
            }
            ASSERT_EQ(actual, expected) << "round " << round << " sample " << k;
            ASSERT_EQ(report.valid(), expected.empty());
        }
    }
}

} // namespace
} // namespace hec
