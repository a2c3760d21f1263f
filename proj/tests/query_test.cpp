#include "hec/error.hpp"
#include "hec/query.hpp"

#include "fixtures.hpp"
#include "random_corpus.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace hec;
using hec::testing::d;

namespace {

Errc code_of(auto&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error raised";
    return Errc::InvalidValue;
}

std::string syntax_message(std::string_view text) {
    try {
        parse_query(text);
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::SyntaxError);
        return e.what();
    }
    ADD_FAILURE() << "parsed: " << text;
    return {};
}

} // namespace

// ---------------------------------------------------------------------------
// Parsing and printing
// ---------------------------------------------------------------------------

TEST(QueryParse, JawChildrenAgeBand) {
    auto q = parse_query(R"(FIND events WHERE concept = "hec:Jaw" AND event_type = "XRayImaging" AND age IN [5, 10])");
    EXPECT_EQ(q.target, QueryTarget::Events);
    AndExpr expected{{ConceptIs{"hec:Jaw"}, EventTypeIs{"XRayImaging"},
                      AgeAtEventIn{Decimal::from_int(5), Decimal::from_int(10)}}};
    EXPECT_EQ(q.predicate, Expr(expected));
    EXPECT_EQ(to_string(q), R"(FIND events WHERE concept = "hec:Jaw" AND event_type = "XRayImaging" AND age IN [5, 10])");
    EXPECT_EQ(parse_query(to_string(q)), q);
}

TEST(QueryParse, EmptyPredicateIsTrue) {
    auto q = parse_query("FIND events");
    EXPECT_EQ(q.target, QueryTarget::Events);
    EXPECT_EQ(q.predicate, Expr(Constant{true}));
    EXPECT_EQ(parse_query("find PATIENTS").target, QueryTarget::Patients);
    EXPECT_EQ(parse_query("FIND variables").target, QueryTarget::Variables);
}

TEST(QueryParse, DanglingConnective) {
    auto msg = syntax_message("FIND events WHERE AND");
    EXPECT_NE(msg.find("1:19"), std::string::npos) << msg;
    EXPECT_NE(msg.find("expected atom"), std::string::npos) << msg;
}

TEST(QueryParse, ErrorPositions) {
    EXPECT_NE(syntax_message("FIND events WHERE").find("1:18"), std::string::npos);
    EXPECT_NE(syntax_message("FIND things").find("1:6"), std::string::npos);
    auto msg = syntax_message("FIND events\nWHERE SysLVol >");
    EXPECT_NE(msg.find("2:16"), std::string::npos) << msg;
    EXPECT_NE(msg.find("literal"), std::string::npos) << msg;
    EXPECT_NE(syntax_message("FIND events WHERE (a = 1").find("')'"), std::string::npos);
    EXPECT_NE(syntax_message("FIND events WHERE level = Planet").find("vertical level"), std::string::npos);
    EXPECT_NE(syntax_message("FIND events WHERE x = \"open").find("unterminated"), std::string::npos);
    EXPECT_NE(syntax_message("FIND events WHERE time IN [2020-02-30, 2020-03-01]").find("invalid date"),
              std::string::npos);
    syntax_message("FIND events WHERE concept < \"x\"");
    syntax_message("FIND events WHERE a = 1 b = 2");
    syntax_message("FIND events WHERE NOT");
    syntax_message("");
}

TEST(QueryParse, AllAtomForms) {
    auto q = parse_query("FIND variables WHERE NOT (SysLVol >= 30.5 OR RVDilation != \"No\") AND level = Organ "
                         "AND time IN [2010-01-01, 2012-12-31] AND Note = \"say \\\"hi\\\"\" AND x < -2.25");
    ASSERT_TRUE(std::holds_alternative<AndExpr>(q.predicate.node));
    const auto& ops = std::get<AndExpr>(q.predicate.node).operands;
    ASSERT_EQ(ops.size(), 5u);
    EXPECT_EQ(ops[0], Expr(NotExpr{Expr(OrExpr{{VariableCmp{"SysLVol", CmpOp::Ge, Decimal::parse_or_throw("30.5")},
                                                 VariableCmp{"RVDilation", CmpOp::Ne, std::string("No")}}})}));
    EXPECT_EQ(ops[1], Expr(LevelIs{VerticalLevel::Organ}));
    EXPECT_EQ(ops[2], Expr(TimeWindow{d("2010-01-01"), d("2012-12-31")}));
    EXPECT_EQ(ops[3], Expr(VariableCmp{"Note", CmpOp::Eq, std::string("say \"hi\"")}));
    EXPECT_EQ(ops[4], Expr(VariableCmp{"x", CmpOp::Lt, Decimal::parse_or_throw("-2.25")}));
    EXPECT_EQ(parse_query(to_string(q)), q);
}

TEST(QueryParse, PrecedenceAndOverOr) {
    auto q = parse_query("FIND events WHERE a = 1 OR b = 2 AND c = 3");
    EXPECT_EQ(q.predicate, Expr(OrExpr{{VariableCmp{"a", CmpOp::Eq, Decimal::from_int(1)},
                                        AndExpr{{VariableCmp{"b", CmpOp::Eq, Decimal::from_int(2)},
                                                 VariableCmp{"c", CmpOp::Eq, Decimal::from_int(3)}}}}}));
}

TEST(QueryParse, RoundTripOnRandomAsts) {
    std::mt19937 rng(23);
    for (int i = 0; i < 500; ++i) {
        QueryAst q{static_cast<QueryTarget>(i % 3), corpus::parser_shaped(rng, 4)};
        const auto text = to_string(q);
        ASSERT_EQ(parse_query(text), q) << text;
        ASSERT_EQ(to_string(parse_query(text)), text);
    }
}

TEST(QueryBind, ClassificationComparisonsBecomeTypedAtoms) {
    auto registry = hec::testing::clinical_registry();
    auto q = bind(parse_query("FIND events WHERE RVDilation = \"Severe\" AND TumourLoc = \"x\" AND RVDilation != \"No\""),
                  registry);
    const auto& ops = std::get<AndExpr>(q.predicate.node).operands;
    EXPECT_EQ(ops[0], Expr(ClassificationIs{"RVDilation", "Severe"}));
    EXPECT_TRUE(std::holds_alternative<VariableCmp>(ops[1].node));
    EXPECT_TRUE(std::holds_alternative<VariableCmp>(ops[2].node));
}

// ---------------------------------------------------------------------------
// Enhancement
// ---------------------------------------------------------------------------

TEST(QueryEnhance, JawGainsTooth) {
    auto o = hec::testing::jaw_ontology();
    auto q = enhance(parse_query("FIND events WHERE concept = \"hec:Jaw\""), o);
    EXPECT_EQ(q.predicate, Expr(ConceptIsAnyOf{{"hec:Jaw", "hec:Tooth"}}));
}

TEST(QueryEnhance, BrainGainsCerebellum) {
    auto o = hec::testing::jaw_ontology();
    auto q = enhance(parse_query("FIND events WHERE NOT concept = \"fma:Brain\""), o);
    const auto& inner = *std::get<NotExpr>(q.predicate.node).operand;
    EXPECT_TRUE(std::get<ConceptIsAnyOf>(inner.node).uris.contains("fma:Cerebellum"));
}

TEST(QueryEnhance, IdentityWithoutConcepts) {
    auto o = hec::testing::jaw_ontology();
    auto q = parse_query("FIND events WHERE event_type = \"XRayImaging\" OR age IN [1, 2]");
    EXPECT_EQ(enhance(q, o), q);
}

TEST(QueryEnhance, Idempotent) {
    std::mt19937 rng(29);
    for (int i = 0; i < 50; ++i) {
        auto o = corpus::ontology(rng, 30);
        QueryAst q{QueryTarget::Events, corpus::random_expr(rng, 4, 30)};
        auto once = enhance(q, o);
        EXPECT_EQ(enhance(once, o), once);
    }
}

TEST(QueryEnhance, UnknownConcept) {
    auto o = hec::testing::jaw_ontology();
    EXPECT_EQ(code_of([&] { enhance(parse_query("FIND events WHERE concept = \"hec:Nose\""), o); }),
              Errc::UnknownConcept);
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

namespace {

// Four cardiac exams, one per severity grade, for patients aged 7 and 12.
std::unique_ptr<NodeStore> severity_store() {
    using namespace hec::testing;
    auto store = std::make_unique<NodeStore>("n", clinical_registry());
    const char* items[] = {"No", "Mild", "Moderate", "Severe"};
    for (int i = 0; i < 4; ++i) {
        const std::string p = "P" + std::to_string(i);
        const char* birth = i % 2 == 0 ? "2005-01-02" : "2000-01-01";
        store->record_event(patient(p.c_str(), birth), visit(("V" + std::to_string(i)).c_str(), p.c_str(), "2012-06-01"),
                            event("E" + std::to_string(i), "CardiacMRI", "V" + std::to_string(i),
                                  Instant{d("2012-06-01")}, {rv_dilation(items[i])}));
    }
    return store;
}

} // namespace

TEST(QueryOptimize, ClassificationBeforeAgeBand) {
    auto store = severity_store();
    auto q = bind(parse_query("FIND events WHERE age IN [5, 10] AND RVDilation = \"Severe\""), store->registry());
    auto stats = store->stats();
    auto plan = optimize(q, stats, store->registry());
    ASSERT_EQ(plan.conjuncts.size(), 2u);
    EXPECT_EQ(plan.conjuncts[0].atom, Expr(ClassificationIs{"RVDilation", "Severe"}));
    EXPECT_DOUBLE_EQ(plan.conjuncts[0].selectivity, 0.25);
    EXPECT_EQ(plan.conjuncts[1].selectivity, 1.0);

    // Counting oracle: the estimates bracket the actual matching fractions.
    auto severe = corpus::naive_events(*store, ClassificationIs{"RVDilation", "Severe"});
    auto band = corpus::naive_events(*store, AgeAtEventIn{Decimal::from_int(5), Decimal::from_int(10)});
    EXPECT_EQ(severe.size() * 4, stats.events);
    EXPECT_EQ(band.size() * 2, stats.events);
    EXPECT_EQ(corpus::event_ids(execute(plan, *store)), corpus::naive_events(*store, q.predicate));
}

TEST(QueryOptimize, DuplicateConjunctsCollapse) {
    auto store = severity_store();
    auto q = parse_query("FIND events WHERE event_type = \"CardiacMRI\" AND event_type = \"CardiacMRI\"");
    auto plan = optimize(q, store->stats(), store->registry());
    EXPECT_EQ(plan.conjuncts.size(), 1u);
    EXPECT_EQ(plan.residual, Expr(Constant{true}));
}

TEST(QueryOptimize, DeMorganAgreesWithTruthTable) {
    auto store = severity_store();
    auto q = bind(parse_query("FIND events WHERE NOT (RVDilation = \"Severe\" AND age IN [5, 10])"),
                  store->registry());
    auto plan = optimize(q, store->stats(), store->registry());
    const Expr a = ClassificationIs{"RVDilation", "Severe"};
    const Expr b = AgeAtEventIn{Decimal::from_int(5), Decimal::from_int(10)};
    EXPECT_EQ(plan.residual, Expr(OrExpr{{NotExpr{a}, NotExpr{b}}}));
    auto view = store->read();
    for (const auto* e : view.events()) {
        const bool va = corpus::naive_eval(a, *e, view);
        const bool vb = corpus::naive_eval(b, *e, view);
        EXPECT_EQ(evaluate(plan_predicate(plan), *e, view), !(va && vb));
    }
}

TEST(QueryOptimize, ConstantsFold) {
    auto store = severity_store();
    QueryAst q{QueryTarget::Events, AndExpr{{Constant{true}, NotExpr{Expr(Constant{true})}, EventTypeIs{"CardiacMRI"}}}};
    auto plan = optimize(q, store->stats(), store->registry());
    EXPECT_TRUE(plan.conjuncts.empty());
    EXPECT_EQ(plan.residual, Expr(Constant{false}));
    EXPECT_TRUE(execute(plan, *store).rows.empty());
}

TEST(QueryOptimize, DescribeListsSelectivities) {
    auto store = severity_store();
    auto q = bind(parse_query("FIND events WHERE age IN [5, 10] AND RVDilation = \"Severe\""), store->registry());
    auto text = describe(optimize(q, store->stats(), store->registry()));
    EXPECT_NE(text.find("[selectivity 0.2500] RVDilation = \"Severe\""), std::string::npos) << text;
}

TEST(QueryOptimize, SoundOnRandomCorpus) {
    std::mt19937 rng(31);
    for (int trial = 0; trial < 60; ++trial) {
        auto o = corpus::ontology(rng, 30);
        NodeStore store("n", corpus::registry());
        corpus::load(store, corpus::events(rng, 80, 6, 30, "n"));
        for (int k = 0; k < 5; ++k) {
            QueryAst q{QueryTarget::Events, corpus::random_expr(rng, 4, 30)};
            auto plan = optimize(q, store.stats(), store.registry());
            ASSERT_EQ(corpus::event_ids(execute(plan, store)), corpus::naive_events(store, q.predicate))
                << to_string(q);
        }
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

TEST(QueryExecute, JawQueryEnhancedAndRaw) {
    auto o = hec::testing::jaw_ontology();
    auto store = hec::testing::jaw_store(o);
    const char* text = "FIND events WHERE concept = \"hec:Jaw\"";
    auto raw = run_query(text, *store, nullptr);
    ASSERT_EQ(raw.rows.size(), 1u);
    EXPECT_EQ(raw.rows[0].event_id, "X1");
    auto enhanced = run_query(text, *store, &o);
    ASSERT_EQ(enhanced.rows.size(), 2u);
    EXPECT_EQ(enhanced.rows[0].event_id, "X1");
    EXPECT_EQ(enhanced.rows[1].event_id, "X2");
    EXPECT_EQ(enhanced.rows[1].pseudonym, "P-tooth");
}

TEST(QueryExecute, TrueReturnsAllEvents) {
    auto o = hec::testing::jaw_ontology();
    auto store = hec::testing::jaw_store(o);
    EXPECT_EQ(run_query("FIND events", *store, &o).rows.size(), store->events().size());
}

TEST(QueryExecute, TargetsShapeRows) {
    auto store = severity_store();
    auto patients = run_query("FIND patients WHERE RVDilation != \"No\"", *store, nullptr);
    ASSERT_EQ(patients.rows.size(), 3u);
    EXPECT_EQ(patients.rows[0].pseudonym, "P1");
    EXPECT_TRUE(patients.rows[0].event_id.empty());
    auto variables = run_query("FIND variables WHERE RVDilation = \"Mild\"", *store, nullptr);
    ASSERT_EQ(variables.rows.size(), 1u);
    EXPECT_EQ(variables.rows[0].variable_id, "E1#0");
}

TEST(QueryExecute, AgeUsesCompletedYears) {
    auto store = severity_store();
    // Born 2005-01-02, examined 2012-06-01: seven completed years.
    auto rows = run_query("FIND events WHERE age IN [7, 7]", *store, nullptr).rows;
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].event_id, "E0");
}

TEST(QueryExecute, TimeWindowContainment) {
    auto store = severity_store();
    EXPECT_EQ(run_query("FIND events WHERE time IN [2012-06-01, 2012-06-01]", *store, nullptr).rows.size(), 4u);
    EXPECT_TRUE(run_query("FIND events WHERE time IN [2012-06-02, 2013-01-01]", *store, nullptr).rows.empty());
}

TEST(QueryExecute, MeasurementComparisons) {
    using namespace hec::testing;
    NodeStore store("n", clinical_registry());
    store.record_event(patient("P"), visit("V", "P", "2012-01-01"),
                       event("E", "CardiacMRI", "V", Instant{d("2012-01-01")}, {sys_lv_volume("30.5")}));
    EXPECT_EQ(run_query("FIND events WHERE SysLVol = 30.50", store, nullptr).rows.size(), 1u);
    EXPECT_EQ(run_query("FIND events WHERE SysLVol > 30.4", store, nullptr).rows.size(), 1u);
    EXPECT_TRUE(run_query("FIND events WHERE SysLVol < 30.5", store, nullptr).rows.empty());
}

TEST(QueryExecute, StaleMetadata) {
    auto store = severity_store();
    EXPECT_EQ(code_of([&] { run_query("FIND events WHERE Unknown = 1", *store, nullptr); }), Errc::StaleMetadata);
    EXPECT_EQ(code_of([&] { run_query("FIND events WHERE event_type = \"Nope\"", *store, nullptr); }),
              Errc::StaleMetadata);
}

TEST(QueryExecute, EnhancementIsSuperset) {
    std::mt19937 rng(37);
    for (int trial = 0; trial < 60; ++trial) {
        auto o = corpus::ontology(rng, 30);
        NodeStore store("n", corpus::registry());
        corpus::load(store, corpus::events(rng, 60, 5, 30, "n"));
        QueryAst q{QueryTarget::Events, corpus::random_expr(rng, 4, 30, true)};
        auto stats = store.stats();
        auto raw = corpus::event_ids(execute(optimize(q, stats, store.registry()), store));
        auto enhanced = corpus::event_ids(execute(optimize(enhance(q, o), stats, store.registry()), store));
        EXPECT_TRUE(std::includes(enhanced.begin(), enhanced.end(), raw.begin(), raw.end())) << to_string(q);
    }
}

TEST(QueryExecute, RowJsonIsSorted) {
    auto o = hec::testing::jaw_ontology();
    auto store = hec::testing::jaw_store(o);
    auto rows = run_query("FIND events WHERE concept = \"hec:Jaw\"", *store, nullptr).rows;
    EXPECT_EQ(row_to_json(rows.at(0)),
              R"({"event_id":"X1","event_type":"XRayImaging","node":"local","pseudonym":"P-jaw",)"
              R"("time":{"end":"2012-05-10","start":"2012-05-10"},)"
              R"("variables":[{"category":"MedicalConceptInstance","cvt_id":"ImageLoc","id":"X1#0","value":"hec:Jaw"}]})");
}
