#include "hec/store.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <random>

namespace hec {
namespace {

using testing::d;

class StoreTest : public ::testing::Test {
protected:
    NodeStore store{"A", testing::clinical_registry()};

    void SetUp() override {
        store.add_patient(testing::patient("P1", "2000-05-20"));
        store.add_visit(testing::visit("V1", "P1", "2008-03-01"));
    }
};

TEST_F(StoreTest, RecordsClinicalEvent) {
    auto id = store.record_event(testing::event("E1", "CardiacMRI", "V1", Instant{d("2008-03-01")},
                                                {testing::sys_lv_volume(), testing::rv_dilation("Severe")}));
    EXPECT_EQ(id, "E1");
    auto stored = store.event("E1");
    ASSERT_TRUE(stored);
    ASSERT_EQ(stored->variables.size(), 2u);
    EXPECT_EQ(stored->variables[0].id, "E1#0");
    EXPECT_EQ(std::get<Measurement>(stored->variables[0].payload).value(), Decimal::parse_or_throw("30.5"));
    EXPECT_EQ(store.visit("V1")->events, std::vector<std::string>{"E1"});
    auto stats = store.stats();
    EXPECT_EQ(stats.events, 1u);
    EXPECT_EQ(stats.cvts.at("RVDilation").rows, 1u);
    EXPECT_EQ(stats.event_types.at("CardiacMRI"), 1u);
}

TEST_F(StoreTest, RejectsInvalidEventAtomically) {
    try {
        store.record_event(testing::event("E1", "CardiacMRI", "V1", Instant{d("2008-03-01")},
                                          {testing::sys_lv_volume(), testing::rv_dilation("Catastrophic")}));
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.code(), Errc::ValidationFailed);
        EXPECT_TRUE(e.report().has(ViolationCode::ValueNotInClassification));
    }
    EXPECT_FALSE(store.event("E1"));
    EXPECT_EQ(store.stats().events, 0u);
    EXPECT_TRUE(store.visit("V1")->events.empty());
}

TEST_F(StoreTest, RejectsCvtOutsideEventType) {
    try {
        store.record_event(testing::event("E1", "CardiacMRI", "V1", Instant{d("2008-03-01")},
                                          {testing::tumour_location()}));
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_TRUE(e.report().has(ViolationCode::EventTypeMismatch));
    }
}

TEST_F(StoreTest, ReferentialErrors) {
    auto code = [](auto&& f) {
        try {
            f();
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::IoError;
    };
    EXPECT_EQ(code([&] { store.record_event(testing::event("E1", "CardiacMRI", "NoVisit", Instant{d("2008-03-01")})); }),
              Errc::UnknownVisit);
    EXPECT_EQ(code([&] { store.add_visit(testing::visit("V2", "Nobody", "2008-03-01")); }), Errc::UnknownPatient);
    EXPECT_EQ(code([&] { store.add_visit(testing::visit("V0", "P1", "1999-01-01")); }), Errc::InvalidVisitDate);
    store.record_event(testing::event("E1", "CardiacMRI", "V1", Instant{d("2008-03-01")}, {testing::sys_lv_volume()}));
    EXPECT_EQ(code([&] { store.record_event(testing::event("E1", "CardiacMRI", "V1", Instant{d("2008-03-01")})); }),
              Errc::DuplicateId);
}

TEST_F(StoreTest, RelativeTimeCycleIsPropagated) {
    auto e = testing::event("E5", "CardiacMRI", "V1", RelativeTo{"E5", TemporalRelation::During, std::nullopt},
                            {testing::sys_lv_volume()});
    try {
        store.record_event(e);
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), Errc::RelativeTimeCycle);
    }
}

TEST_F(StoreTest, CreatesPatientAndVisitAtomicallyWithEvent) {
    auto p2 = testing::patient("P2", "2001-01-01");
    auto v2 = testing::visit("V2", "P2", "2008-04-01");
    EXPECT_THROW(store.record_event(p2, v2,
                                    testing::event("E2", "CardiacMRI", "V2", Instant{d("2008-04-01")},
                                                   {testing::rv_dilation("Catastrophic")})),
                 ValidationError);
    EXPECT_FALSE(store.patient("P2"));
    EXPECT_FALSE(store.visit("V2"));
    store.record_event(p2, v2,
                       testing::event("E2", "CardiacMRI", "V2", Instant{d("2008-04-01")}, {testing::rv_dilation()}));
    EXPECT_TRUE(store.patient("P2"));
    EXPECT_EQ(store.visit("V2")->events, std::vector<std::string>{"E2"});
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

IngestMapping cardiac_mapping() {
    IngestMapping m;
    m.patient_key_column = "patient";
    m.visit_date_column = "date";
    m.birth_date_column = "birth";
    m.event_type = "CardiacMRI";
    m.columns = {{"sys_lv", "SysLVol", std::nullopt}, {"rv", "RVDilation", std::nullopt}};
    return m;
}

TEST(CsvIngest, AllValidRows) {
    NodeStore store("A", testing::clinical_registry());
    const char* csv =
        "patient,birth,date,sys_lv,rv\n"
        "P1,2000-01-01,2008-03-01,30.5,Severe\n"
        "P2,2001-02-02,2008-03-02,28,Mild\n"
        "P1,2000-01-01,2008-06-01,\"31.25\",No\n";
    auto counts = store.ingest_csv(csv, cardiac_mapping());
    EXPECT_EQ(counts.rows_ok, 3u);
    EXPECT_EQ(counts.rows_rejected, 0u);
    EXPECT_EQ(store.stats().events, 3u);
    EXPECT_EQ(store.patients().size(), 2u);
}

TEST(CsvIngest, OneRowOutsideClassification) {
    NodeStore store("A", testing::clinical_registry());
    const char* csv =
        "patient,birth,date,sys_lv,rv\n"
        "P1,2000-01-01,2008-03-01,30.5,Severe\n"
        "P2,2001-02-02,2008-03-02,28,Catastrophic\n"
        "P3,2002-01-01,2008-03-03,29,Mild\n";
    auto counts = store.ingest_csv(csv, cardiac_mapping());

    // Per-row oracle: validate each row's classification cell on its own.
    const auto registry = testing::clinical_registry();
    std::size_t expected_bad = 0;
    for (const char* item : {"Severe", "Catastrophic", "Mild"}) {
        if (!registry.validate_variable(testing::rv_dilation(item), "CardiacMRI").valid()) {
            ++expected_bad;
        }
    }
    EXPECT_EQ(counts.rows_ok, 3u - expected_bad);
    EXPECT_EQ(counts.rows_rejected, expected_bad);
    EXPECT_EQ(counts.violations.at("ValueNotInClassification"), 1u);
    ASSERT_EQ(counts.rejected.size(), 1u);
    EXPECT_EQ(counts.rejected[0].line, 3u);
    EXPECT_FALSE(store.patient("P2"));
}

TEST(CsvIngest, HeaderOnly) {
    NodeStore store("A", testing::clinical_registry());
    auto counts = store.ingest_csv("patient,birth,date,sys_lv,rv\n", cardiac_mapping());
    EXPECT_EQ(counts.rows_ok, 0u);
    EXPECT_EQ(counts.rows_rejected, 0u);
}

TEST(CsvIngest, FileAndMappingErrors) {
    NodeStore store("A", testing::clinical_registry());
    try {
        store.ingest_csv("patient,birth,date,sys_lv,rv\nP1,\"2000-01-01,2008-03-01,30.5,Severe\n",
                         cardiac_mapping());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::MalformedCSV);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
    auto bad = cardiac_mapping();
    bad.columns.push_back({"rv", "Ghost", std::nullopt});
    try {
        store.ingest_csv("patient,birth,date,sys_lv,rv\n", bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::MappingError);
    }
}

TEST(CsvParse, QuotingRules) {
    auto t = parse_csv("a,b\r\n\"x, \"\"y\"\"\",\"multi\nline\"\r\n");
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.rows[0][0], "x, \"y\"");
    EXPECT_EQ(t.rows[0][1], "multi\nline");
    EXPECT_THROW(parse_csv("a,b\n1\n"), Error);
}

TEST(CsvIngest, MappingFromJson) {
    auto m = IngestMapping::parse(R"({"patient_key_column":"patient","visit_date_column":"date",
        "event_type":"CardiacMRI","birth_date_column":"birth",
        "columns":[{"column":"sys_lv","cvt_id":"SysLVol","unit":"mL/m²"}]})");
    EXPECT_EQ(m.columns.size(), 1u);
    EXPECT_EQ(m.columns[0].unit, "mL/m²");
    EXPECT_THROW(IngestMapping::parse("{}"), Error);
}

// ---------------------------------------------------------------------------
// DICOM
// ---------------------------------------------------------------------------

TEST(Dicom, SidecarParsesFourTags) {
    auto data = parse_dicom_sidecar("# CT head\n00100020=P1\n0020000D=S1\n0020000E=SE1\n00200013=1\n");
    ASSERT_EQ(data.tags.size(), 4u);
    EXPECT_EQ(*data.find(dicom_tags::patient_id), "P1");
    EXPECT_EQ(*data.find(dicom_tags::instance_number), "1");
    std::string reserialized;
    for (const auto& [tag, value] : data.tags) {
        reserialized += tag.to_string() + "=" + value + "\n";
    }
    EXPECT_EQ(parse_dicom_sidecar(reserialized), data);
}

TEST(Dicom, MalformedTagNamesLine) {
    try {
        parse_dicom_sidecar("00100020=P1\n0010002=X\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::MalformedTag);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(Dicom, AssembleSeriesOrdersByInstanceNumber) {
    std::vector<std::pair<std::string, DicomData>> instances{
        {"img-b", parse_dicom_sidecar("0020000D=S1\n0020000E=SE1\n00200013=2\n")},
        {"img-a", parse_dicom_sidecar("0020000D=S1\n0020000E=SE1\n00200013=1\n")},
        {"img-c", parse_dicom_sidecar("0020000D=S1\n0020000E=SE2\n00200013=1\n")},
    };
    auto series = assemble_series(instances, "S1", "SE1");
    EXPECT_EQ(series.members, (std::vector<std::string>{"img-a", "img-b"}));
    EXPECT_THROW(assemble_series(instances, "S9", "SE1"), Error);
}

TEST(Dicom, StoredSeriesMustShareStudyAndSeries) {
    Registry r;
    r.define_cvt({"Img", "Image metadata", VariableCategory::DICOMData, std::nullopt, std::nullopt, VerticalLevel::Organ});
    r.define_cvt({"Ser", "Image series", VariableCategory::DICOMSeries, std::nullopt, std::nullopt, VerticalLevel::Organ});
    r.define_met({"CT", "CT", {"Img", "Ser"}, VerticalLevel::Organ});
    NodeStore store("A", r);
    store.add_patient(testing::patient("P1"));
    store.add_visit(testing::visit("V1", "P1", "2008-03-01"));
    store.record_event(testing::event(
        "E1", "CT", "V1", Instant{d("2008-03-01")},
        {{"i2", "Img", parse_dicom_sidecar("0020000D=S1\n0020000E=SE1\n00200013=2\n")},
         {"i1", "Img", parse_dicom_sidecar("0020000D=S1\n0020000E=SE1\n00200013=1\n")},
         {"i3", "Img", parse_dicom_sidecar("0020000D=S1\n0020000E=SE2\n00200013=1\n")}}));
    auto series = store.assemble_series("S1", "SE1");
    EXPECT_EQ(series.members, (std::vector<std::string>{"i1", "i2"}));
    EXPECT_NO_THROW(store.record_event(
        testing::event("E2", "CT", "V1", Instant{d("2008-03-01")}, {{"s1", "Ser", series}})));
    DicomSeries mixed{{"i1", "i3"}, "S1", "SE1"};
    try {
        store.record_event(testing::event("E3", "CT", "V1", Instant{d("2008-03-01")}, {{"s2", "Ser", mixed}}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidSeries);
    }
}

// ---------------------------------------------------------------------------
// Longitudinal view
// ---------------------------------------------------------------------------

class LongitudinalTest : public ::testing::Test {
protected:
    NodeStore store{"A", [] {
        auto r = testing::clinical_registry();
        r.define_cvt({"Gene", "Gene variant", VariableCategory::Annotation, std::nullopt, std::nullopt,
                      VerticalLevel::Molecular});
        r.define_met({"Genotyping", "Genotyping", {"Gene"}, VerticalLevel::Molecular});
        return r;
    }()};

    void SetUp() override {
        store.add_patient(testing::patient("P1"));
        store.add_visit(testing::visit("V1", "P1", "2008-03-01"));
        store.record_event(testing::event("late", "CardiacMRI", "V1", Instant{d("2008-05-01")},
                                          {testing::sys_lv_volume()}));
        store.record_event(testing::event("gene", "Genotyping", "V1", Instant{d("2008-04-01")},
                                          {{"", "Gene", Annotation{"BRCA", std::nullopt}}}));
        store.record_event(testing::event("early", "CardiacMRI", "V1", Instant{d("2008-03-01")},
                                          {testing::sys_lv_volume("29")}));
        store.record_event(testing::event("floating", "CardiacMRI", "V1",
                                          RelativeTo{"missing", TemporalRelation::After, std::nullopt},
                                          {testing::sys_lv_volume("28")}));
    }
};

TEST_F(LongitudinalTest, FiltersByLevel) {
    auto view = store.longitudinal_view("P1", {VerticalLevel::Molecular});
    ASSERT_EQ(view.size(), 1u);
    EXPECT_EQ(view.by_level.at(VerticalLevel::Molecular)[0].event.event_id, "gene");
}

TEST_F(LongitudinalTest, SortsByResolvedStartUnresolvableLast) {
    auto view = store.longitudinal_view("P1", {VerticalLevel::Organ});
    const auto& organ = view.by_level.at(VerticalLevel::Organ);
    std::vector<std::string> ids;
    for (const auto& e : organ) {
        ids.push_back(e.event.event_id);
    }
    EXPECT_EQ(ids, (std::vector<std::string>{"early", "late", "floating"}));
}

TEST_F(LongitudinalTest, AllLevelsPartitionEvents) {
    std::set<VerticalLevel> all(all_vertical_levels.begin(), all_vertical_levels.end());
    auto view = store.longitudinal_view("P1", all);
    EXPECT_EQ(view.size(), 4u);
    std::set<std::string> seen;
    for (const auto& [level, entries] : view.by_level) {
        for (const auto& e : entries) {
            EXPECT_TRUE(seen.insert(e.event.event_id).second);
        }
    }
    EXPECT_THROW(store.longitudinal_view("Nobody", all), Error);
}

// ---------------------------------------------------------------------------
// Persistence and invariants
// ---------------------------------------------------------------------------

TEST_F(StoreTest, SerializeRoundTripIsByteIdentical) {
    store.record_event(testing::event("E1", "CardiacMRI", "V1", Interval(d("2008-03-01"), d("2008-03-02")),
                                      {testing::sys_lv_volume(), testing::rv_dilation()}));
    store.record_event(testing::event("E0", "CardiacMRI", "V1", RelativeTo{"E1", TemporalRelation::Before, -3},
                                      {testing::sys_lv_volume("12.000")}));
    const auto patients = store.serialize_patients();
    const auto visits = store.serialize_visits();
    const auto events = store.serialize_events();
    auto back = NodeStore::from_serialized("A", store.registry(), patients, visits, events);
    EXPECT_EQ(back->serialize_patients(), patients);
    EXPECT_EQ(back->serialize_visits(), visits);
    EXPECT_EQ(back->serialize_events(), events);
    EXPECT_TRUE(back->revalidate().valid());
    EXPECT_EQ(back->stats().cvts.at("SysLVol").distinct, 2u);
}

TEST_F(StoreTest, SaveAndLoadDirectory) {
    store.record_event(testing::event("E1", "CardiacMRI", "V1", Instant{d("2008-03-01")}, {testing::sys_lv_volume()}));
    const auto dir = std::filesystem::temp_directory_path() / "hec_store_test_dir";
    std::filesystem::remove_all(dir);
    store.save(dir);
    auto back = NodeStore::load(dir, "A");
    EXPECT_EQ(back->serialize_events(), store.serialize_events());
    EXPECT_EQ(back->registry().serialize(), store.registry().serialize());
    std::filesystem::remove_all(dir);
}

// Random define/ingest sequences never leave an invalid variable in the store.
TEST(StoreProperty, StoredDataAlwaysRevalidates) {
    std::mt19937 rng(99);
    auto pick = [&rng](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
    for (int round = 0; round < 20; ++round) {
        NodeStore store("A", testing::clinical_registry());
        store.add_patient(testing::patient("P"));
        store.add_visit(testing::visit("V", "P", "2008-01-01"));
        int extra_items = 0;
        for (int op = 0; op < 60; ++op) {
            switch (pick(4)) {
            case 0: {
                auto cls = *store.registry().find_classification("Severity");
                cls.items.push_back("Extra" + std::to_string(extra_items++));
                store.registry().define_classification(cls);
                break;
            }
            case 1: {
                const std::string id = "Note" + std::to_string(op);
                store.registry().define_cvt(
                    {id, id, VariableCategory::Annotation, std::nullopt, std::nullopt, VerticalLevel::Body});
                auto met = *store.registry().find_met("CardiacMRI");
                met.member_cvts.insert(id);
                store.registry().define_met(met);
                break;
            }
            default: {
                const char* items[] = {"No", "Severe", "Bogus", "Extra0", "Extra3"};
                const char* units[] = {"mL/m²", "mL"};
                std::vector<ClinicalVariable> vars{testing::rv_dilation(items[pick(5)])};
                vars.push_back({"", "SysLVol", Measurement(Decimal::from_int(pick(50)), units[pick(2)])});
                try {
                    store.record_event(testing::event("E" + std::to_string(op), "CardiacMRI", "V",
                                                      Instant{d("2008-01-01")}, vars));
                } catch (const ValidationError&) {
                }
            }
            }
            ASSERT_TRUE(store.revalidate().valid());
        }
    }
}

} // namespace
} // namespace hec
