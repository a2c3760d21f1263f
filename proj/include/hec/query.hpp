/**
 * @file query.hpp
 * @brief Query language over a NodeStore: parser, ontology-driven
 *        enhancement, plan optimization and single-node execution.
 *
 * A predicate is evaluated per medical event. Variable atoms hold when some
 * variable of the event satisfies them; `NOT` negates that event-level truth.
 * parse, enhance and optimize are pure functions; execute reads through a
 * store ReadView.
 */

#ifndef HEC_QUERY_HPP
#define HEC_QUERY_HPP

#include "hec/ontology.hpp"
#include "hec/store.hpp"

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace hec {

enum class QueryTarget { Patients, Events, Variables };

std::string_view to_string(QueryTarget target) noexcept;

enum class CmpOp { Eq, Ne, Lt, Le, Gt, Ge };

std::string_view to_string(CmpOp op) noexcept;

/// Heap-allocated value with deep copy, for the recursive NOT node.
template <typename T>
class Box {
public:
    Box(T value) : ptr_(std::make_unique<T>(std::move(value))) {}
    Box(const Box& other) : ptr_(std::make_unique<T>(*other.ptr_)) {}
    Box(Box&&) noexcept = default;
    Box& operator=(const Box& other) {
        ptr_ = std::make_unique<T>(*other.ptr_);
        return *this;
    }
    Box& operator=(Box&&) noexcept = default;

    const T& operator*() const noexcept { return *ptr_; }
    T& operator*() noexcept { return *ptr_; }
    const T* operator->() const noexcept { return ptr_.get(); }
    T* operator->() noexcept { return ptr_.get(); }

    friend bool operator==(const Box& a, const Box& b) { return *a.ptr_ == *b.ptr_; }

private:
    std::unique_ptr<T> ptr_;
};

using Literal = std::variant<Decimal, std::string>;

// Atoms ----------------------------------------------------------------------

/// Numeric literals compare against measurement values (other categories when
/// their text parses as a number); string literals compare against value_text.
struct VariableCmp {
    std::string cvt_id;
    CmpOp op = CmpOp::Eq;
    Literal value;
    friend bool operator==(const VariableCmp&, const VariableCmp&) = default;
};

struct ConceptIs {
    std::string uri;
    friend bool operator==(const ConceptIs&, const ConceptIs&) = default;
};

struct ConceptIsAnyOf {
    std::set<std::string> uris;
    friend bool operator==(const ConceptIsAnyOf&, const ConceptIsAnyOf&) = default;
};

struct ClassificationIs {
    std::string cvt_id;
    std::string item;
    friend bool operator==(const ClassificationIs&, const ClassificationIs&) = default;
};

struct EventTypeIs {
    std::string met_id;
    friend bool operator==(const EventTypeIs&, const EventTypeIs&) = default;
};

struct LevelIs {
    VerticalLevel level = VerticalLevel::Body;
    friend bool operator==(const LevelIs&, const LevelIs&) = default;
};

/// Completed years from birth to the event's resolved start, inclusive band.
struct AgeAtEventIn {
    Decimal min_years;
    Decimal max_years;
    friend bool operator==(const AgeAtEventIn&, const AgeAtEventIn&) = default;
};

/// The event's resolved span must lie inside [start, end].
struct TimeWindow {
    Date start;
    Date end;
    friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

/// TRUE is the empty WHERE clause; FALSE comes from federation translation.
struct Constant {
    bool value = true;
    friend bool operator==(const Constant&, const Constant&) = default;
};

// Connectives ----------------------------------------------------------------

struct Expr;

struct AndExpr {
    std::vector<Expr> operands;
    friend bool operator==(const AndExpr&, const AndExpr&) = default;
};

struct OrExpr {
    std::vector<Expr> operands;
    friend bool operator==(const OrExpr&, const OrExpr&) = default;
};

struct NotExpr {
    Box<Expr> operand;
    friend bool operator==(const NotExpr&, const NotExpr&) = default;
};

struct Expr {
    using Node = std::variant<Constant, VariableCmp, ConceptIs, ConceptIsAnyOf, ClassificationIs, EventTypeIs,
                              LevelIs, AgeAtEventIn, TimeWindow, AndExpr, OrExpr, NotExpr>;
    Node node;

    Expr() : node(Constant{true}) {}
    Expr(Constant value) : node(std::move(value)) {}
    Expr(VariableCmp value) : node(std::move(value)) {}
    Expr(ConceptIs value) : node(std::move(value)) {}
    Expr(ConceptIsAnyOf value) : node(std::move(value)) {}
    Expr(ClassificationIs value) : node(std::move(value)) {}
    Expr(EventTypeIs value) : node(std::move(value)) {}
    Expr(LevelIs value) : node(std::move(value)) {}
    Expr(AgeAtEventIn value) : node(std::move(value)) {}
    Expr(TimeWindow value) : node(std::move(value)) {}
    Expr(AndExpr value) : node(std::move(value)) {}
    Expr(OrExpr value) : node(std::move(value)) {}
    Expr(NotExpr value) : node(std::move(value)) {}

    bool is_atom() const noexcept;
    friend bool operator==(const Expr&, const Expr&) = default;
};

struct QueryAst {
    QueryTarget target = QueryTarget::Events;
    Expr predicate;
    friend bool operator==(const QueryAst&, const QueryAst&) = default;
};

// =============================================================================
// Front end
// =============================================================================

/// Errors: SyntaxError with `line:column` and the expected token class.
QueryAst parse_query(std::string_view text);

/// Query text in the grammar. Parser-produced ASTs print back to text that
/// parses to the same AST; ConceptIsAnyOf prints as an OR of concept atoms.
std::string to_string(const QueryAst& query);
std::string to_string(const Expr& expr);

/// Rewrites `cvt = "item"` into ClassificationIs when the CVT is a
/// classification in `registry`. Other atoms are left alone.
QueryAst bind(QueryAst query, const Registry& registry);

// =============================================================================
// Enhancement and planning
// =============================================================================

/// Replaces every ConceptIs(c) and ConceptIsAnyOf(S) with the set closed
/// under descendants. Idempotent. Errors: UnknownConcept.
QueryAst enhance(QueryAst query, const Ontology& ontology,
                 const PredicateSet& predicates = default_expansion_predicates);

/// Estimated fraction of events an expression matches, from count/distinct
/// statistics only; 1.0 when nothing is known.
double estimate_selectivity(const Expr& expr, const StoreStats& stats, const Registry& registry);

struct PlannedConjunct {
    Expr atom;  // an atom or a negated atom
    double selectivity = 1.0;
};

struct QueryPlan {
    QueryTarget target = QueryTarget::Events;
    std::vector<PlannedConjunct> conjuncts;  // ascending selectivity
    Expr residual;                           // evaluated after the conjuncts
};

/// Negation normal form, flattened and deduplicated, with atomic conjuncts
/// ordered by ascending selectivity. Never changes the result set.
QueryPlan optimize(const QueryAst& query, const StoreStats& stats, const Registry& registry);

/// The plan's predicate as a single tree.
Expr plan_predicate(const QueryPlan& plan);

std::string describe(const QueryPlan& plan);

// =============================================================================
// Execution
// =============================================================================

struct ResultRow {
    std::string pseudonym;
    std::string event_id;     // empty for patient rows
    std::string variable_id;  // variable rows only
    std::string event_type;
    std::optional<ResolvedInterval> time;
    std::vector<ClinicalVariable> variables;  // projected variables
    std::string node_id;                      // provenance

    /// (pseudonym, event_id, variable_id)
    std::tuple<std::string, std::string, std::string> key() const;
};

struct ResultSet {
    QueryTarget target = QueryTarget::Events;
    std::vector<ResultRow> rows;  // ordered by key()
};

/// Evaluates a predicate against one event of the view.
bool evaluate(const Expr& expr, const MedicalEvent& event, const NodeStore::ReadView& view);

/// Identifiers in `expr` that `registry` does not define (CVTs and METs).
std::vector<std::string> unknown_identifiers(const Expr& expr, const Registry& registry);

/// Errors: StaleMetadata when the plan names CVTs or METs the store's
/// registry lacks.
ResultSet execute(const QueryPlan& plan, const NodeStore::ReadView& view);
ResultSet execute(const QueryPlan& plan, const NodeStore& store);

/// Parse, bind, optionally enhance, optimize and execute in one call.
ResultSet run_query(std::string_view text, const NodeStore& store, const Ontology* ontology);

/// One JSON object per line, keys sorted.
std::string row_to_json(const ResultRow& row);

} // namespace hec

#endif // HEC_QUERY_HPP
