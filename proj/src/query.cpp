#include "hec/query.hpp"

#include "hec/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace hec {

std::string_view to_string(QueryTarget target) noexcept {
    switch (target) {
    case QueryTarget::Patients: return "patients";
    case QueryTarget::Events: return "events";
    case QueryTarget::Variables: return "variables";
    }
    return "";
}

std::string_view to_string(CmpOp op) noexcept {
    switch (op) {
    case CmpOp::Eq: return "=";
    case CmpOp::Ne: return "!=";
    case CmpOp::Lt: return "<";
    case CmpOp::Le: return "<=";
    case CmpOp::Gt: return ">";
    case CmpOp::Ge: return ">=";
    }
    return "";
}

bool Expr::is_atom() const noexcept {
    return !std::holds_alternative<Constant>(node) && !std::holds_alternative<AndExpr>(node) &&
           !std::holds_alternative<OrExpr>(node) && !std::holds_alternative<NotExpr>(node);
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool is_negated_atom(const Expr& e) {
    const auto* n = std::get_if<NotExpr>(&e.node);
    return n != nullptr && (*n->operand).is_atom();
}

// =============================================================================
// Lexer
// =============================================================================

enum class Tok { Ident, String, Number, DateLit, LParen, RParen, LBracket, RBracket, Comma, Op, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;
    std::size_t line = 1;
    std::size_t column = 1;
};

std::string describe_token(const Token& t) {
    switch (t.kind) {
    case Tok::End: return "end of input";
    case Tok::String: return "string \"" + t.text + "\"";
    default: return "'" + t.text + "'";
    }
}

[[noreturn]] void syntax_error(std::size_t line, std::size_t column, const std::string& message) {
    throw Error(Errc::SyntaxError, std::to_string(line) + ":" + std::to_string(column) + ": " + message);
}

bool is_date_at(std::string_view s, std::size_t i) {
    if (i + 10 > s.size()) {
        return false;
    }
    for (std::size_t k = 0; k < 10; ++k) {
        const char c = s[i + k];
        const bool dash = k == 4 || k == 7;
        if (dash ? c != '-' : !std::isdigit(static_cast<unsigned char>(c))) {
            return false;
        }
    }
    return i + 10 == s.size() || !std::isalnum(static_cast<unsigned char>(s[i + 10]));
}

std::vector<Token> lex(std::string_view s) {
    std::vector<Token> out;
    std::size_t i = 0;
    std::size_t line = 1;
    std::size_t line_start = 0;
    auto digit = [&s](std::size_t k) { return k < s.size() && std::isdigit(static_cast<unsigned char>(s[k])); };
    while (true) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) {
            if (s[i] == '\n') {
                ++line;
                line_start = i + 1;
            }
            ++i;
        }
        Token t;
        t.line = line;
        t.column = i - line_start + 1;
        if (i >= s.size()) {
            out.push_back(t);
            return out;
        }
        const char c = s[i];
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i;
            while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) {
                ++j;
            }
            t.kind = Tok::Ident;
            t.text = std::string(s.substr(i, j - i));
            i = j;
        } else if (c == '"') {
            std::size_t j = i + 1;
            std::string value;
            while (j < s.size() && s[j] != '"') {
                if (s[j] == '\n') {
                    break;
                }
                if (s[j] == '\\' && j + 1 < s.size()) {
                    ++j;
                }
                value += s[j];
                ++j;
            }
            if (j >= s.size() || s[j] != '"') {
                syntax_error(t.line, t.column, "unterminated string");
            }
            t.kind = Tok::String;
            t.text = std::move(value);
            i = j + 1;
        } else if (is_date_at(s, i)) {
            t.kind = Tok::DateLit;
            t.text = std::string(s.substr(i, 10));
            i += 10;
        } else if (digit(i) || (c == '-' && digit(i + 1))) {
            std::size_t j = i + 1;
            while (digit(j)) {
                ++j;
            }
            if (j < s.size() && s[j] == '.' && digit(j + 1)) {
                ++j;
                while (digit(j)) {
                    ++j;
                }
            }
            t.kind = Tok::Number;
            t.text = std::string(s.substr(i, j - i));
            i = j;
        } else if (c == '(' || c == ')' || c == '[' || c == ']' || c == ',') {
            t.kind = c == '('   ? Tok::LParen
                     : c == ')' ? Tok::RParen
                     : c == '[' ? Tok::LBracket
                     : c == ']' ? Tok::RBracket
                                : Tok::Comma;
            t.text = std::string(1, c);
            ++i;
        } else if (c == '=' || c == '<' || c == '>' || (c == '!' && i + 1 < s.size() && s[i + 1] == '=')) {
            std::size_t len = (c != '=' && i + 1 < s.size() && s[i + 1] == '=') ? 2 : 1;
            t.kind = Tok::Op;
            t.text = std::string(s.substr(i, len));
            i += len;
        } else {
            syntax_error(t.line, t.column, std::string("unexpected character '") + c + "'");
        }
        out.push_back(std::move(t));
    }
}

// =============================================================================
// Parser
// =============================================================================

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::toupper(static_cast<unsigned char>(x)) == std::toupper(static_cast<unsigned char>(y));
           });
}

bool is_reserved(std::string_view word) {
    for (auto k : {"FIND", "WHERE", "AND", "OR", "NOT", "IN"}) {
        if (iequals(word, k)) {
            return true;
        }
    }
    return false;
}

class Parser {
public:
    explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

    QueryAst query() {
        QueryAst q;
        expect_keyword("FIND");
        const auto& t = peek();
        if (t.kind == Tok::Ident && iequals(t.text, "patients")) {
            q.target = QueryTarget::Patients;
        } else if (t.kind == Tok::Ident && iequals(t.text, "events")) {
            q.target = QueryTarget::Events;
        } else if (t.kind == Tok::Ident && iequals(t.text, "variables")) {
            q.target = QueryTarget::Variables;
        } else {
            fail("target (patients, events or variables)");
        }
        advance();
        if (at_keyword("WHERE")) {
            advance();
            q.predicate = expr();
        }
        if (peek().kind != Tok::End) {
            fail("end of input");
        }
        return q;
    }

private:
    const Token& peek() const { return tokens_[pos_]; }
    const Token& advance() { return tokens_[pos_ < tokens_.size() - 1 ? pos_++ : pos_]; }

    [[noreturn]] void fail(const std::string& expected) const {
        const auto& t = peek();
        syntax_error(t.line, t.column, "expected " + expected + ", found " + describe_token(t));
    }

    bool at_keyword(std::string_view k) const { return peek().kind == Tok::Ident && iequals(peek().text, k); }

    void expect_keyword(std::string_view k) {
        if (!at_keyword(k)) {
            fail("'" + std::string(k) + "'");
        }
        advance();
    }

    const Token& expect(Tok kind, const std::string& what) {
        if (peek().kind != kind) {
            fail(what);
        }
        return advance();
    }

    void expect_op(std::string_view op) {
        if (peek().kind != Tok::Op || peek().text != op) {
            fail("'" + std::string(op) + "'");
        }
        advance();
    }

    Expr expr() {
        std::vector<Expr> terms{term()};
        while (at_keyword("OR")) {
            advance();
            terms.push_back(term());
        }
        return terms.size() == 1 ? std::move(terms.front()) : Expr(OrExpr{std::move(terms)});
    }

    Expr term() {
        std::vector<Expr> factors{factor()};
        while (at_keyword("AND")) {
            advance();
            factors.push_back(factor());
        }
        return factors.size() == 1 ? std::move(factors.front()) : Expr(AndExpr{std::move(factors)});
    }

    Expr factor() {
        bool negated = false;
        if (at_keyword("NOT")) {
            advance();
            negated = true;
        }
        Expr inner;
        if (peek().kind == Tok::LParen) {
            advance();
            inner = expr();
            expect(Tok::RParen, "')'");
        } else {
            inner = atom();
        }
        return negated ? Expr(NotExpr{std::move(inner)}) : inner;
    }

    Decimal number() {
        const auto& t = expect(Tok::Number, "number");
        auto value = Decimal::parse(t.text);
        if (!value) {
            syntax_error(t.line, t.column, "number '" + t.text + "' out of range");
        }
        return *value;
    }

    Date date() {
        const auto& t = peek();
        if (t.kind != Tok::DateLit && t.kind != Tok::String) {
            fail("date");
        }
        auto value = Date::parse(t.text);
        if (!value) {
            syntax_error(t.line, t.column, "invalid date '" + t.text + "'");
        }
        advance();
        return *value;
    }

    Expr atom() {
        const auto& t = peek();
        if (t.kind != Tok::Ident || is_reserved(t.text)) {
            fail("atom or '('");
        }
        const std::string word = t.text;
        advance();
        if (word == "concept") {
            expect_op("=");
            return ConceptIs{expect(Tok::String, "string").text};
        }
        if (word == "event_type") {
            expect_op("=");
            return EventTypeIs{expect(Tok::String, "string").text};
        }
        if (word == "level") {
            expect_op("=");
            auto level = peek().kind == Tok::Ident ? parse_vertical_level(peek().text) : std::nullopt;
            if (!level) {
                fail("vertical level");
            }
            advance();
            return LevelIs{*level};
        }
        if (word == "age") {
            expect_keyword("IN");
            expect(Tok::LBracket, "'['");
            AgeAtEventIn a{number(), {}};
            expect(Tok::Comma, "','");
            a.max_years = number();
            expect(Tok::RBracket, "']'");
            return a;
        }
        if (word == "time") {
            expect_keyword("IN");
            expect(Tok::LBracket, "'['");
            TimeWindow w{date(), {}};
            expect(Tok::Comma, "','");
            w.end = date();
            expect(Tok::RBracket, "']'");
            return w;
        }
        VariableCmp cmp;
        cmp.cvt_id = word;
        if (peek().kind != Tok::Op) {
            fail("comparison operator");
        }
        const auto op = advance().text;
        cmp.op = op == "="    ? CmpOp::Eq
                 : op == "!=" ? CmpOp::Ne
                 : op == "<"  ? CmpOp::Lt
                 : op == "<=" ? CmpOp::Le
                 : op == ">"  ? CmpOp::Gt
                              : CmpOp::Ge;
        const auto& lit = peek();
        if (lit.kind == Tok::String || lit.kind == Tok::DateLit) {
            cmp.value = lit.text;
            advance();
        } else if (lit.kind == Tok::Number) {
            cmp.value = number();
        } else {
            fail("literal (string or number)");
        }
        return cmp;
    }

    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
};

// =============================================================================
// Printer
// =============================================================================

std::string quote(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') {
            out += '\\';
        }
        out += c;
    }
    return out + "\"";
}

bool is_compound(const Expr& e) {
    return std::holds_alternative<AndExpr>(e.node) || std::holds_alternative<OrExpr>(e.node);
}

std::string print(const Expr& e);

std::string print_operand(const Expr& e) {
    if (is_compound(e)) {
        return "(" + print(e) + ")";
    }
    if (const auto* any = std::get_if<ConceptIsAnyOf>(&e.node); any && any->uris.size() > 1) {
        return "(" + print(e) + ")";
    }
    return print(e);
}

std::string join(const std::vector<Expr>& operands, std::string_view sep) {
    std::string out;
    for (const auto& o : operands) {
        if (!out.empty()) {
            out += sep;
        }
        out += print_operand(o);
    }
    return out;
}

std::string print(const Expr& e) {
    return std::visit(
        overloaded{
            [](const Constant& c) -> std::string { return c.value ? "TRUE" : "FALSE"; },
            [](const VariableCmp& v) {
                std::string lit = std::holds_alternative<Decimal>(v.value) ? std::get<Decimal>(v.value).to_string()
                                                                            : quote(std::get<std::string>(v.value));
                return v.cvt_id + " " + std::string(to_string(v.op)) + " " + lit;
            },
            [](const ConceptIs& c) { return "concept = " + quote(c.uri); },
            [](const ConceptIsAnyOf& c) -> std::string {
                if (c.uris.empty()) {
                    return "FALSE";
                }
                std::string out;
                for (const auto& u : c.uris) {
                    out += (out.empty() ? "" : " OR ") + ("concept = " + quote(u));
                }
                return out;
            },
            [](const ClassificationIs& c) { return c.cvt_id + " = " + quote(c.item); },
            [](const EventTypeIs& t) { return "event_type = " + quote(t.met_id); },
            [](const LevelIs& l) { return "level = " + std::string(to_string(l.level)); },
            [](const AgeAtEventIn& a) {
                return "age IN [" + a.min_years.to_string() + ", " + a.max_years.to_string() + "]";
            },
            [](const TimeWindow& w) { return "time IN [" + w.start.to_string() + ", " + w.end.to_string() + "]"; },
            [](const AndExpr& a) { return join(a.operands, " AND "); },
            [](const OrExpr& o) { return join(o.operands, " OR "); },
            [](const NotExpr& n) {
                const Expr& inner = *n.operand;
                if (inner.is_atom() && !std::holds_alternative<ConceptIsAnyOf>(inner.node)) {
                    return "NOT " + print(inner);
                }
                return "NOT (" + print(inner) + ")";
            },
        },
        e.node);
}

template <typename F>
Expr transform(const Expr& e, F&& leaf) {
    return std::visit(overloaded{
                          [&](const AndExpr& a) -> Expr {
                              AndExpr out;
                              for (const auto& o : a.operands) {
                                  out.operands.push_back(transform(o, leaf));
                              }
                              return out;
                          },
                          [&](const OrExpr& a) -> Expr {
                              OrExpr out;
                              for (const auto& o : a.operands) {
                                  out.operands.push_back(transform(o, leaf));
                              }
                              return out;
                          },
                          [&](const NotExpr& n) -> Expr { return NotExpr{transform(*n.operand, leaf)}; },
                          [&](const auto&) -> Expr { return leaf(e); },
                      },
                      e.node);
}

template <typename F>
void for_each_leaf(const Expr& e, F&& f) {
    std::visit(overloaded{
                   [&](const AndExpr& a) {
                       for (const auto& o : a.operands) {
                           for_each_leaf(o, f);
                       }
                   },
                   [&](const OrExpr& a) {
                       for (const auto& o : a.operands) {
                           for_each_leaf(o, f);
                       }
                   },
                   [&](const NotExpr& n) { for_each_leaf(*n.operand, f); },
                   [&](const auto&) { f(e); },
               },
               e.node);
}

} // namespace

QueryAst parse_query(std::string_view text) {
    return Parser(lex(text)).query();
}

std::string to_string(const Expr& expr) {
    return print(expr);
}

std::string to_string(const QueryAst& query) {
    std::string out = "FIND " + std::string(to_string(query.target));
    if (query.predicate != Expr(Constant{true})) {
        out += " WHERE " + print(query.predicate);
    }
    return out;
}

QueryAst bind(QueryAst query, const Registry& registry) {
    query.predicate = transform(query.predicate, [&registry](const Expr& e) -> Expr {
        const auto* cmp = std::get_if<VariableCmp>(&e.node);
        if (cmp == nullptr || cmp->op != CmpOp::Eq || !std::holds_alternative<std::string>(cmp->value)) {
            return e;
        }
        auto cvt = registry.find_cvt(cmp->cvt_id);
        if (!cvt || cvt->category != VariableCategory::ObservationByClassification) {
            return e;
        }
        return ClassificationIs{cmp->cvt_id, std::get<std::string>(cmp->value)};
    });
    return query;
}

// =============================================================================
// Enhancement
// =============================================================================

QueryAst enhance(QueryAst query, const Ontology& ontology, const PredicateSet& predicates) {
    auto close = [&](const std::set<std::string>& uris) {
        ConceptIsAnyOf out;
        for (const auto& u : uris) {
            out.uris.insert(u);
            for (auto& d : ontology.descendants(u, predicates)) {
                out.uris.insert(std::move(d));
            }
        }
        return out;
    };
    query.predicate = transform(query.predicate, [&](const Expr& e) -> Expr {
        if (const auto* c = std::get_if<ConceptIs>(&e.node)) {
            return close({c->uri});
        }
        if (const auto* c = std::get_if<ConceptIsAnyOf>(&e.node)) {
            return close(c->uris);
        }
        return e;
    });
    return query;
}

// =============================================================================
// Planning
// =============================================================================

double estimate_selectivity(const Expr& expr, const StoreStats& stats, const Registry& registry) {
    if (stats.events == 0) {
        return 1.0;
    }
    const double events = static_cast<double>(stats.events);
    auto capped = [](double x) { return std::clamp(x, 0.0, 1.0); };
    auto equality = [&](const std::string& cvt_id) {
        auto it = stats.cvts.find(cvt_id);
        if (it == stats.cvts.end() || it->second.distinct == 0) {
            return 1.0;
        }
        return capped(static_cast<double>(it->second.rows) / events / static_cast<double>(it->second.distinct));
    };
    auto concept_mass = [&](const std::set<std::string>& uris) {
        double total = 0;
        for (const auto& u : uris) {
            if (auto it = stats.concept_counts.find(u); it != stats.concept_counts.end()) {
                total += static_cast<double>(it->second);
            }
        }
        return capped(total / events);
    };
    return std::visit(
        overloaded{
            [](const Constant& c) { return c.value ? 1.0 : 0.0; },
            [&](const VariableCmp& v) {
                if (v.op == CmpOp::Eq) {
                    return equality(v.cvt_id);
                }
                auto it = stats.cvts.find(v.cvt_id);
                return it == stats.cvts.end() ? 1.0 : capped(static_cast<double>(it->second.rows) / events);
            },
            [&](const ConceptIs& c) { return concept_mass({c.uri}); },
            [&](const ConceptIsAnyOf& c) { return concept_mass(c.uris); },
            [&](const ClassificationIs& c) { return equality(c.cvt_id); },
            [&](const EventTypeIs& t) {
                auto it = stats.event_types.find(t.met_id);
                return it == stats.event_types.end() ? 0.0 : capped(static_cast<double>(it->second) / events);
            },
            [&](const LevelIs& l) {
                double total = 0;
                for (const auto& [met, count] : stats.event_types) {
                    auto m = registry.find_met(met);
                    if (m && m->vertical_level == l.level) {
                        total += static_cast<double>(count);
                    }
                }
                return capped(total / events);
            },
            [](const AgeAtEventIn&) { return 1.0; },
            [](const TimeWindow&) { return 1.0; },
            [&](const AndExpr& a) {
                double p = 1.0;
                for (const auto& o : a.operands) {
                    p *= estimate_selectivity(o, stats, registry);
                }
                return p;
            },
            [&](const OrExpr& a) {
                double s = 0.0;
                for (const auto& o : a.operands) {
                    s += estimate_selectivity(o, stats, registry);
                }
                return capped(s);
            },
            [&](const NotExpr& n) { return 1.0 - estimate_selectivity(*n.operand, stats, registry); },
        },
        expr.node);
}

namespace {

Expr to_nnf(const Expr& e, bool negate) {
    if (const auto* a = std::get_if<AndExpr>(&e.node)) {
        std::vector<Expr> ops;
        for (const auto& o : a->operands) {
            ops.push_back(to_nnf(o, negate));
        }
        return negate ? Expr(OrExpr{std::move(ops)}) : Expr(AndExpr{std::move(ops)});
    }
    if (const auto* a = std::get_if<OrExpr>(&e.node)) {
        std::vector<Expr> ops;
        for (const auto& o : a->operands) {
            ops.push_back(to_nnf(o, negate));
        }
        return negate ? Expr(AndExpr{std::move(ops)}) : Expr(OrExpr{std::move(ops)});
    }
    if (const auto* n = std::get_if<NotExpr>(&e.node)) {
        return to_nnf(*n->operand, !negate);
    }
    if (const auto* c = std::get_if<Constant>(&e.node)) {
        return Constant{c->value != negate};
    }
    return negate ? Expr(NotExpr{e}) : e;
}

// Flattens nested connectives of the same kind, drops duplicates and folds
// constants. Input must be in negation normal form.
Expr simplify(const Expr& e) {
    const bool is_and = std::holds_alternative<AndExpr>(e.node);
    if (!is_and && !std::holds_alternative<OrExpr>(e.node)) {
        return e;
    }
    const auto& operands = is_and ? std::get<AndExpr>(e.node).operands : std::get<OrExpr>(e.node).operands;
    // AND absorbs TRUE and collapses on FALSE; OR the reverse.
    const bool identity = is_and;
    std::vector<Expr> out;
    auto add = [&](Expr x) {
        if (const auto* c = std::get_if<Constant>(&x.node)) {
            if (c->value == identity) {
                return true;
            }
            out = {Constant{!identity}};
            return false;
        }
        if (std::find(out.begin(), out.end(), x) == out.end()) {
            out.push_back(std::move(x));
        }
        return true;
    };
    for (const auto& o : operands) {
        auto s = simplify(o);
        bool keep_going = true;
        if (is_and && std::holds_alternative<AndExpr>(s.node)) {
            for (auto& x : std::get<AndExpr>(s.node).operands) {
                keep_going = keep_going && add(std::move(x));
            }
        } else if (!is_and && std::holds_alternative<OrExpr>(s.node)) {
            for (auto& x : std::get<OrExpr>(s.node).operands) {
                keep_going = keep_going && add(std::move(x));
            }
        } else {
            keep_going = add(std::move(s));
        }
        if (!keep_going) {
            return Constant{!identity};
        }
    }
    if (out.empty()) {
        return Constant{identity};
    }
    if (out.size() == 1) {
        return std::move(out.front());
    }
    return is_and ? Expr(AndExpr{std::move(out)}) : Expr(OrExpr{std::move(out)});
}

} // namespace

QueryPlan optimize(const QueryAst& query, const StoreStats& stats, const Registry& registry) {
    QueryPlan plan;
    plan.target = query.target;
    Expr normal = simplify(to_nnf(query.predicate, false));

    std::vector<Expr> conjuncts;
    if (auto* a = std::get_if<AndExpr>(&normal.node)) {
        conjuncts = std::move(a->operands);
    } else {
        conjuncts.push_back(std::move(normal));
    }
    std::vector<Expr> residual;
    for (auto& c : conjuncts) {
        if (c.is_atom() || is_negated_atom(c)) {
            const double s = estimate_selectivity(c, stats, registry);
            plan.conjuncts.push_back({std::move(c), s});
        } else {
            residual.push_back(std::move(c));
        }
    }
    std::stable_sort(plan.conjuncts.begin(), plan.conjuncts.end(),
                     [](const PlannedConjunct& a, const PlannedConjunct& b) { return a.selectivity < b.selectivity; });
    if (residual.size() == 1) {
        plan.residual = std::move(residual.front());
    } else if (!residual.empty()) {
        plan.residual = AndExpr{std::move(residual)};
    }
    return plan;
}

Expr plan_predicate(const QueryPlan& plan) {
    std::vector<Expr> ops;
    for (const auto& c : plan.conjuncts) {
        ops.push_back(c.atom);
    }
    if (plan.residual != Expr(Constant{true}) || ops.empty()) {
        ops.push_back(plan.residual);
    }
    return ops.size() == 1 ? ops.front() : Expr(AndExpr{std::move(ops)});
}

std::string describe(const QueryPlan& plan) {
    std::string out = "plan for " + std::string(to_string(plan.target)) + ":\n";
    std::size_t i = 0;
    for (const auto& c : plan.conjuncts) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", c.selectivity);
        out += "  " + std::to_string(++i) + ". [selectivity " + buf + "] " + print(c.atom) + "\n";
    }
    if (plan.residual != Expr(Constant{true}) || plan.conjuncts.empty()) {
        out += "  residual: " + print(plan.residual) + "\n";
    }
    return out;
}

// =============================================================================
// Execution
// =============================================================================

std::tuple<std::string, std::string, std::string> ResultRow::key() const {
    return {pseudonym, event_id, variable_id};
}

namespace {

template <typename T>
bool compare(const T& a, CmpOp op, const T& b) {
    switch (op) {
    case CmpOp::Eq: return a == b;
    case CmpOp::Ne: return a != b;
    case CmpOp::Lt: return a < b;
    case CmpOp::Le: return a <= b;
    case CmpOp::Gt: return a > b;
    case CmpOp::Ge: return a >= b;
    }
    return false;
}

bool variable_matches(const ClinicalVariable& v, const VariableCmp& cmp) {
    if (v.cvt_id != cmp.cvt_id) {
        return false;
    }
    if (const auto* number = std::get_if<Decimal>(&cmp.value)) {
        if (const auto* m = std::get_if<Measurement>(&v.payload)) {
            return compare(m->value(), cmp.op, *number);
        }
        auto parsed = Decimal::parse(value_text(v.payload));
        return parsed && compare(*parsed, cmp.op, *number);
    }
    return compare(value_text(v.payload), cmp.op, std::get<std::string>(cmp.value));
}

bool has_concept(const MedicalEvent& event, auto&& accept) {
    return std::any_of(event.variables.begin(), event.variables.end(), [&](const ClinicalVariable& v) {
        const auto* c = std::get_if<MedicalConceptInstance>(&v.payload);
        return c != nullptr && accept(c->concept_uri);
    });
}

} // namespace

bool evaluate(const Expr& expr, const MedicalEvent& event, const NodeStore::ReadView& view) {
    return std::visit(
        overloaded{
            [](const Constant& c) { return c.value; },
            [&](const VariableCmp& cmp) {
                return std::any_of(event.variables.begin(), event.variables.end(),
                                   [&](const ClinicalVariable& v) { return variable_matches(v, cmp); });
            },
            [&](const ConceptIs& c) { return has_concept(event, [&](const std::string& u) { return u == c.uri; }); },
            [&](const ConceptIsAnyOf& c) {
                return has_concept(event, [&](const std::string& u) { return c.uris.contains(u); });
            },
            [&](const ClassificationIs& c) {
                return std::any_of(event.variables.begin(), event.variables.end(), [&](const ClinicalVariable& v) {
                    const auto* o = std::get_if<ObservationByClassification>(&v.payload);
                    return v.cvt_id == c.cvt_id && o != nullptr && o->item == c.item;
                });
            },
            [&](const EventTypeIs& t) { return event.event_type == t.met_id; },
            [&](const LevelIs& l) {
                auto met = view.registry().find_met(event.event_type);
                return met && met->vertical_level == l.level;
            },
            [&](const AgeAtEventIn& a) {
                const auto* patient = view.patient_of(event);
                auto time = view.resolved_time(event);
                if (patient == nullptr || !time || !time->start) {
                    return false;
                }
                const auto age = Decimal::from_int(completed_years(patient->birth_date, *time->start));
                return a.min_years <= age && age <= a.max_years;
            },
            [&](const TimeWindow& w) {
                auto time = view.resolved_time(event);
                return time && time->start && time->end && w.start <= *time->start && *time->end <= w.end;
            },
            [&](const AndExpr& a) {
                return std::all_of(a.operands.begin(), a.operands.end(),
                                   [&](const Expr& o) { return evaluate(o, event, view); });
            },
            [&](const OrExpr& a) {
                return std::any_of(a.operands.begin(), a.operands.end(),
                                   [&](const Expr& o) { return evaluate(o, event, view); });
            },
            [&](const NotExpr& n) { return !evaluate(*n.operand, event, view); },
        },
        expr.node);
}

std::vector<std::string> unknown_identifiers(const Expr& expr, const Registry& registry) {
    std::set<std::string> missing;
    for_each_leaf(expr, [&](const Expr& e) {
        if (const auto* v = std::get_if<VariableCmp>(&e.node); v && !registry.has_cvt(v->cvt_id)) {
            missing.insert(v->cvt_id);
        } else if (const auto* c = std::get_if<ClassificationIs>(&e.node); c && !registry.has_cvt(c->cvt_id)) {
            missing.insert(c->cvt_id);
        } else if (const auto* t = std::get_if<EventTypeIs>(&e.node); t && !registry.has_met(t->met_id)) {
            missing.insert(t->met_id);
        }
    });
    return {missing.begin(), missing.end()};
}

ResultSet execute(const QueryPlan& plan, const NodeStore::ReadView& view) {
    if (auto missing = unknown_identifiers(plan_predicate(plan), view.registry()); !missing.empty()) {
        std::string list;
        for (const auto& m : missing) {
            list += (list.empty() ? "" : ", ") + m;
        }
        throw Error(Errc::StaleMetadata, "query names identifiers unknown to node '" + view.node_id() + "': " + list);
    }
    const bool has_residual = plan.residual != Expr(Constant{true});

    ResultSet result;
    result.target = plan.target;
    std::set<std::string> patients;
    for (const auto* event : view.events()) {
        bool match = std::all_of(plan.conjuncts.begin(), plan.conjuncts.end(),
                                 [&](const PlannedConjunct& c) { return evaluate(c.atom, *event, view); });
        if (!match || (has_residual && !evaluate(plan.residual, *event, view))) {
            continue;
        }
        const auto* patient = view.patient_of(*event);
        const std::string pseudonym = patient ? patient->pseudonym : std::string();
        if (plan.target == QueryTarget::Patients) {
            patients.insert(pseudonym);
            continue;
        }
        ResultRow row;
        row.pseudonym = pseudonym;
        row.event_id = event->event_id;
        row.event_type = event->event_type;
        row.time = view.resolved_time(*event);
        row.node_id = view.node_id();
        if (plan.target == QueryTarget::Events) {
            row.variables = event->variables;
            result.rows.push_back(std::move(row));
        } else {
            for (const auto& v : event->variables) {
                ResultRow vr = row;
                vr.variable_id = v.id;
                vr.variables = {v};
                result.rows.push_back(std::move(vr));
            }
        }
    }
    for (const auto& p : patients) {
        ResultRow row;
        row.pseudonym = p;
        row.node_id = view.node_id();
        result.rows.push_back(std::move(row));
    }
    std::sort(result.rows.begin(), result.rows.end(),
              [](const ResultRow& a, const ResultRow& b) { return a.key() < b.key(); });
    return result;
}

ResultSet execute(const QueryPlan& plan, const NodeStore& store) {
    return execute(plan, store.read());
}

ResultSet run_query(std::string_view text, const NodeStore& store, const Ontology* ontology) {
    auto query = bind(parse_query(text), store.registry());
    if (ontology != nullptr) {
        query = enhance(std::move(query), *ontology);
    }
    auto view = store.read();
    return execute(optimize(query, view.stats(), view.registry()), view);
}

std::string row_to_json(const ResultRow& row) {
    nlohmann::json j;
    j["pseudonym"] = row.pseudonym;
    if (!row.node_id.empty()) {
        j["node"] = row.node_id;
    }
    if (!row.event_id.empty()) {
        j["event_id"] = row.event_id;
        j["event_type"] = row.event_type;
        if (row.time) {
            j["time"] = {{"start", row.time->start ? nlohmann::json(row.time->start->to_string()) : nlohmann::json()},
                         {"end", row.time->end ? nlohmann::json(row.time->end->to_string()) : nlohmann::json()}};
        } else {
            j["time"] = nullptr;
        }
        auto vars = nlohmann::json::array();
        for (const auto& v : row.variables) {
            vars.push_back({{"id", v.id},
                            {"cvt_id", v.cvt_id},
                            {"category", std::string(to_string(category_of(v.payload)))},
                            {"value", value_text(v.payload)}});
        }
        j["variables"] = std::move(vars);
    }
    if (!row.variable_id.empty()) {
        j["variable_id"] = row.variable_id;
    }
    return j.dump();
}

} // namespace hec
