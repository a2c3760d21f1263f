#include "hec/ontology.hpp"

#include "hec/error.hpp"
#include "io_util.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <deque>

namespace hec {

std::string_view to_string(ConceptGroup group) noexcept {
    switch (group) {
    case ConceptGroup::Anatomical: return "Anatomical";
    case ConceptGroup::Symptom: return "Symptom";
    case ConceptGroup::Disease: return "Disease";
    case ConceptGroup::TreatmentDrug: return "TreatmentDrug";
    }
    return "";
}

std::optional<ConceptGroup> parse_concept_group(std::string_view text) noexcept {
    for (auto g : {ConceptGroup::Anatomical, ConceptGroup::Symptom, ConceptGroup::Disease,
                   ConceptGroup::TreatmentDrug}) {
        if (to_string(g) == text) {
            return g;
        }
    }
    return std::nullopt;
}

std::string_view to_string(Predicate predicate) noexcept {
    switch (predicate) {
    case Predicate::is_a: return "is_a";
    case Predicate::part_of: return "part_of";
    case Predicate::regional_part_of: return "regional_part_of";
    case Predicate::associated_with: return "associated_with";
    }
    return "";
}

std::optional<Predicate> parse_predicate(std::string_view text) noexcept {
    for (auto p : {Predicate::is_a, Predicate::part_of, Predicate::regional_part_of, Predicate::associated_with}) {
        if (to_string(p) == text) {
            return p;
        }
    }
    return std::nullopt;
}

std::string_view to_string(MappingMethod method) noexcept {
    switch (method) {
    case MappingMethod::ExactLabel: return "ExactLabel";
    case MappingMethod::TokenOverlap: return "TokenOverlap";
    case MappingMethod::SharedInstances: return "SharedInstances";
    case MappingMethod::Manual: return "Manual";
    }
    return "";
}

std::optional<MappingMethod> parse_mapping_method(std::string_view text) noexcept {
    for (auto m : {MappingMethod::ExactLabel, MappingMethod::TokenOverlap, MappingMethod::SharedInstances,
                   MappingMethod::Manual}) {
        if (to_string(m) == text) {
            return m;
        }
    }
    return std::nullopt;
}

// =============================================================================
// Graph construction
// =============================================================================

void Ontology::add_concept(const MedicalConcept& concept_) {
    if (concept_.uri.empty() || concept_.label.empty()) {
        throw Error(Errc::InvalidValue, "concept uri and label must be non-empty");
    }
    if (concept_.uri.find_first_of(" \t\r\n\"") != std::string::npos) {
        throw Error(Errc::InvalidValue, "concept uri '" + concept_.uri + "' contains whitespace or quotes");
    }
    if (!concepts_.emplace(concept_.uri, concept_).second) {
        throw Error(Errc::DuplicateURI, "concept '" + concept_.uri + "' already exists");
    }
}

bool Ontology::reaches_upward(const std::string& from, const std::string& target, Predicate predicate) const {
    std::set<std::string> seen{from};
    std::vector<std::string> stack{from};
    while (!stack.empty()) {
        auto current = std::move(stack.back());
        stack.pop_back();
        if (current == target) {
            return true;
        }
        auto it = parents_.find(current);
        if (it == parents_.end()) {
            continue;
        }
        for (const auto& edge : it->second) {
            if (edge.predicate == predicate && seen.insert(edge.other).second) {
                stack.push_back(edge.other);
            }
        }
    }
    return false;
}

void Ontology::add_relation(const ConceptRelation& relation) {
    if (!contains(relation.subject) || !contains(relation.object)) {
        throw Error(Errc::UnknownEndpoint, "relation " + relation.subject + " " +
                                               std::string(to_string(relation.predicate)) + " " +
                                               relation.object + " has an unknown endpoint");
    }
    if (relation_set_.contains(relation)) {
        return;
    }
    if (relation.subject == relation.object ||
        (relation.predicate != Predicate::associated_with &&
         reaches_upward(relation.object, relation.subject, relation.predicate))) {
        throw Error(Errc::CycleIntroduced, "CycleIntroduced(" + std::string(to_string(relation.predicate)) +
                                               "): " + relation.subject + " -> " + relation.object);
    }
    relations_.push_back(relation);
    relation_set_.insert(relation);
    parents_[relation.subject].push_back({relation.predicate, relation.object});
    children_[relation.object].push_back({relation.predicate, relation.subject});
}

void Ontology::add_binding(const ConceptBinding& binding, const Registry* registry) {
    if (!contains(binding.concept_uri)) {
        throw Error(Errc::UnknownConcept, "binding to unknown concept '" + binding.concept_uri + "'");
    }
    if (registry != nullptr && !registry->has_cvt(binding.cvt_id)) {
        throw Error(Errc::UnknownCVT, "binding from unknown CVT '" + binding.cvt_id + "'");
    }
    if (binding.cvt_id.empty()) {
        throw Error(Errc::InvalidValue, "binding needs a CVT id");
    }
    auto [it, inserted] = bindings_.emplace(binding.cvt_id, binding.concept_uri);
    if (!inserted && it->second != binding.concept_uri) {
        throw Error(Errc::DuplicateId, "CVT '" + binding.cvt_id + "' is already bound to '" + it->second + "'");
    }
}

bool Ontology::contains(std::string_view uri) const {
    return concepts_.find(uri) != concepts_.end();
}

const MedicalConcept* Ontology::find(std::string_view uri) const {
    auto it = concepts_.find(uri);
    return it == concepts_.end() ? nullptr : &it->second;
}

std::optional<std::string> Ontology::concept_for_cvt(std::string_view cvt_id) const {
    auto it = bindings_.find(cvt_id);
    return it == bindings_.end() ? std::nullopt : std::optional(it->second);
}

std::vector<MedicalConcept> Ontology::concepts() const {
    std::vector<MedicalConcept> out;
    out.reserve(concepts_.size());
    for (const auto& [uri, c] : concepts_) {
        out.push_back(c);
    }
    return out;
}

std::vector<ConceptBinding> Ontology::bindings() const {
    std::vector<ConceptBinding> out;
    for (const auto& [cvt, uri] : bindings_) {
        out.push_back({cvt, uri});
    }
    return out;
}

ConceptResolver Ontology::resolver() const {
    return [this](std::string_view uri) { return contains(uri); };
}

// =============================================================================
// Closure and fragments
// =============================================================================

std::vector<std::string> Ontology::descendants(std::string_view root, const PredicateSet& predicates,
                                               std::optional<std::size_t> max_depth) const {
    if (!contains(root)) {
        throw Error(Errc::UnknownConcept, "unknown concept '" + std::string(root) + "'");
    }
    std::set<std::string> found;
    std::deque<std::pair<std::string, std::size_t>> queue{{std::string(root), 0}};
    std::set<std::string> visited{std::string(root)};
    while (!queue.empty()) {
        auto [current, depth] = std::move(queue.front());
        queue.pop_front();
        if (max_depth && depth >= *max_depth) {
            continue;
        }
        auto it = children_.find(current);
        if (it == children_.end()) {
            continue;
        }
        for (const auto& edge : it->second) {
            if (!predicates.contains(edge.predicate)) {
                continue;
            }
            if (visited.insert(edge.other).second) {
                found.insert(edge.other);
                queue.emplace_back(edge.other, depth + 1);
            }
        }
    }
    return {found.begin(), found.end()};
}

std::set<std::string> Ontology::is_a_ancestors(std::string_view uri) const {
    if (!contains(uri)) {
        throw Error(Errc::UnknownConcept, "unknown concept '" + std::string(uri) + "'");
    }
    std::set<std::string> out{std::string(uri)};
    std::vector<std::string> stack{std::string(uri)};
    while (!stack.empty()) {
        auto current = std::move(stack.back());
        stack.pop_back();
        auto it = parents_.find(current);
        if (it == parents_.end()) {
            continue;
        }
        for (const auto& edge : it->second) {
            if (edge.predicate == Predicate::is_a && out.insert(edge.other).second) {
                stack.push_back(edge.other);
            }
        }
    }
    return out;
}

Ontology Ontology::extract_fragment(const std::set<std::string>& roots, std::size_t depth) const {
    std::set<std::string> included;
    std::deque<std::pair<std::string, std::size_t>> queue;
    for (const auto& root : roots) {
        if (!contains(root)) {
            throw Error(Errc::UnknownConcept, "unknown concept '" + root + "'");
        }
        if (included.insert(root).second) {
            queue.emplace_back(root, 0);
        }
    }
    while (!queue.empty()) {
        auto [current, d] = std::move(queue.front());
        queue.pop_front();
        if (d >= depth) {
            continue;
        }
        for (const auto* adjacency : {&parents_, &children_}) {
            auto it = adjacency->find(current);
            if (it == adjacency->end()) {
                continue;
            }
            for (const auto& edge : it->second) {
                if (included.insert(edge.other).second) {
                    queue.emplace_back(edge.other, d + 1);
                }
            }
        }
    }

    Ontology fragment;
    for (const auto& uri : included) {
        fragment.add_concept(concepts_.at(uri));
    }
    for (const auto& r : relations_) {
        if (included.contains(r.subject) && included.contains(r.object)) {
            fragment.add_relation(r);
        }
    }
    for (const auto& [cvt, uri] : bindings_) {
        if (included.contains(uri)) {
            fragment.add_binding({cvt, uri});
        }
    }
    return fragment;
}

// =============================================================================
// Information content
// =============================================================================

std::set<std::string> Ontology::is_a_component(std::string_view uri) const {
    std::set<std::string> component{std::string(uri)};
    std::vector<std::string> stack{std::string(uri)};
    while (!stack.empty()) {
        auto current = std::move(stack.back());
        stack.pop_back();
        for (const auto* adjacency : {&parents_, &children_}) {
            auto it = adjacency->find(current);
            if (it == adjacency->end()) {
                continue;
            }
            for (const auto& edge : it->second) {
                if (edge.predicate == Predicate::is_a && component.insert(edge.other).second) {
                    stack.push_back(edge.other);
                }
            }
        }
    }
    return component;
}

std::uint64_t Ontology::effective_count(const std::string& uri, const AnnotationCounts& counts) const {
    auto own = [&counts](const std::string& c) -> std::uint64_t {
        auto it = counts.find(c);
        return it == counts.end() ? 0 : it->second;
    };
    std::uint64_t total = own(uri);
    for (const auto& d : descendants(uri, {Predicate::is_a})) {
        total += own(d);
    }
    return total;
}

namespace {

double ic_from(std::uint64_t effective, std::uint64_t corpus) {
    return -std::log(static_cast<double>(effective) / static_cast<double>(corpus));
}

} // namespace

double Ontology::information_content(std::string_view uri, const AnnotationCounts& counts) const {
    if (!contains(uri)) {
        throw Error(Errc::UnknownConcept, "unknown concept '" + std::string(uri) + "'");
    }
    std::uint64_t corpus = 0;
    for (const auto& c : is_a_component(uri)) {
        if (auto it = counts.find(c); it != counts.end()) {
            corpus += it->second;
        }
    }
    const auto effective = effective_count(std::string(uri), counts);
    if (corpus == 0 || effective == 0) {
        throw Error(Errc::ZeroCorpus, "no annotations for '" + std::string(uri) + "' or its is_a descendants");
    }
    return ic_from(effective, corpus);
}

double Ontology::resnik_similarity(std::string_view a, std::string_view b, const AnnotationCounts& counts) const {
    const auto ancestors_a = is_a_ancestors(a);
    const auto ancestors_b = is_a_ancestors(b);
    std::vector<std::string> common;
    std::set_intersection(ancestors_a.begin(), ancestors_a.end(), ancestors_b.begin(), ancestors_b.end(),
                          std::back_inserter(common));
    if (common.empty()) {
        throw Error(Errc::NoCommonAncestor,
                    "'" + std::string(a) + "' and '" + std::string(b) + "' share no is_a ancestor");
    }
    std::uint64_t corpus = 0;
    for (const auto& c : is_a_component(a)) {
        if (auto it = counts.find(c); it != counts.end()) {
            corpus += it->second;
        }
    }
    if (corpus == 0) {
        throw Error(Errc::ZeroCorpus, "no annotations in the is_a hierarchy of '" + std::string(a) + "'");
    }
    std::optional<double> best;
    for (const auto& c : common) {
        const auto effective = effective_count(c, counts);
        if (effective == 0) {
            continue;
        }
        const double ic = ic_from(effective, corpus);
        if (!best || ic > *best) {
            best = ic;
        }
    }
    if (!best) {
        throw Error(Errc::ZeroCorpus, "no common ancestor of '" + std::string(a) + "' and '" + std::string(b) +
                                          "' carries annotations");
    }
    // -ln(1) is -0.0; report it as 0.
    return *best == 0.0 ? 0.0 : *best;
}

// =============================================================================
// Text format
// =============================================================================

namespace {

std::string quote(std::string_view text) {
    std::string out = "\"";
    for (char c : text) {
        if (c == '"' || c == '\\') {
            out += '\\';
        }
        out += c;
    }
    out += '"';
    return out;
}

struct LineCursor {
    std::string_view rest;
    std::size_t line;

    [[noreturn]] void fail(const std::string& what) const {
        throw Error(Errc::MalformedOntology, "line " + std::to_string(line) + ": " + what);
    }

    void skip_space() {
        while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\t')) {
            rest.remove_prefix(1);
        }
    }

    bool at_end() {
        skip_space();
        return rest.empty();
    }

    std::string word() {
        skip_space();
        std::size_t n = 0;
        while (n < rest.size() && rest[n] != ' ' && rest[n] != '\t') {
            ++n;
        }
        if (n == 0) {
            fail("unexpected end of line");
        }
        std::string out(rest.substr(0, n));
        rest.remove_prefix(n);
        return out;
    }

    std::string quoted() {
        skip_space();
        if (rest.empty() || rest.front() != '"') {
            fail("expected a quoted label");
        }
        rest.remove_prefix(1);
        std::string out;
        while (!rest.empty() && rest.front() != '"') {
            if (rest.front() == '\\' && rest.size() > 1) {
                rest.remove_prefix(1);
            }
            out += rest.front();
            rest.remove_prefix(1);
        }
        if (rest.empty()) {
            fail("unterminated label");
        }
        rest.remove_prefix(1);
        return out;
    }
};

template <typename F>
void for_each_declaration(std::string_view text, F&& f) {
    std::size_t pos = 0;
    std::size_t line = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        ++line;
        auto content = text.substr(pos, end - pos);
        pos = end + 1;
        if (!content.empty() && content.back() == '\r') {
            content.remove_suffix(1);
        }
        LineCursor cursor{content, line};
        if (cursor.at_end() || cursor.rest.front() == '#') {
            continue;
        }
        f(cursor);
    }
}

} // namespace

std::string Ontology::serialize() const {
    std::string out;
    for (const auto& [uri, c] : concepts_) {
        out += "concept " + uri + " " + std::string(to_string(c.group)) + " " + quote(c.label) + "\n";
    }
    for (const auto& r : relations_) {
        out += "rel " + r.subject + " " + std::string(to_string(r.predicate)) + " " + r.object + "\n";
    }
    for (const auto& [cvt, uri] : bindings_) {
        out += "bind " + cvt + " " + uri + "\n";
    }
    return out;
}

Ontology Ontology::parse(std::string_view text) {
    Ontology ontology;
    struct Pending {
        std::size_t line;
        ConceptRelation relation;
    };
    std::vector<Pending> relations;
    std::vector<std::pair<std::size_t, ConceptBinding>> bindings;
    for_each_declaration(text, [&](LineCursor& cursor) {
        const auto keyword = cursor.word();
        if (keyword == "concept") {
            MedicalConcept c;
            c.uri = cursor.word();
            const auto group = cursor.word();
            auto parsed = parse_concept_group(group);
            if (!parsed) {
                cursor.fail("unknown concept group '" + group + "'");
            }
            c.group = *parsed;
            c.label = cursor.quoted();
            if (!cursor.at_end()) {
                cursor.fail("trailing text after label");
            }
            try {
                ontology.add_concept(c);
            } catch (const Error& e) {
                cursor.fail(e.what());
            }
        } else if (keyword == "rel") {
            ConceptRelation r;
            r.subject = cursor.word();
            const auto predicate = cursor.word();
            auto parsed = parse_predicate(predicate);
            if (!parsed) {
                cursor.fail("unknown predicate '" + predicate + "'");
            }
            r.predicate = *parsed;
            r.object = cursor.word();
            if (!cursor.at_end()) {
                cursor.fail("trailing text after relation");
            }
            relations.push_back({cursor.line, r});
        } else if (keyword == "bind") {
            ConceptBinding b;
            b.cvt_id = cursor.word();
            b.concept_uri = cursor.word();
            if (!cursor.at_end()) {
                cursor.fail("trailing text after binding");
            }
            bindings.emplace_back(cursor.line, b);
        } else {
            cursor.fail("unknown declaration '" + keyword + "'");
        }
    });
    // Relations and bindings may precede the concepts they name.
    for (const auto& p : relations) {
        try {
            ontology.add_relation(p.relation);
        } catch (const Error& e) {
            if (e.code() == Errc::CycleIntroduced) {
                throw;
            }
            throw Error(Errc::MalformedOntology, "line " + std::to_string(p.line) + ": " + e.what());
        }
    }
    for (const auto& [line, b] : bindings) {
        try {
            ontology.add_binding(b);
        } catch (const Error& e) {
            throw Error(Errc::MalformedOntology, "line " + std::to_string(line) + ": " + e.what());
        }
    }
    return ontology;
}

Ontology Ontology::load(const std::filesystem::path& path) {
    return parse(read_text_file(path));
}

void Ontology::save(const std::filesystem::path& path) const {
    write_text_file(path, serialize());
}

// =============================================================================
// Mapping discovery
// =============================================================================

std::string normalize_label(std::string_view label) {
    std::vector<std::string> tokens;
    std::string current;
    for (char raw : label) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else if (std::ispunct(c)) {
            continue;
        } else {
            current += static_cast<char>(std::tolower(c));
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    std::sort(tokens.begin(), tokens.end());
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) {
            out += ' ';
        }
        out += t;
    }
    return out;
}

std::set<std::string> label_tokens(std::string_view label) {
    std::set<std::string> tokens;
    const auto normalized = normalize_label(label);
    std::size_t pos = 0;
    while (pos < normalized.size()) {
        auto end = normalized.find(' ', pos);
        if (end == std::string::npos) {
            end = normalized.size();
        }
        tokens.insert(normalized.substr(pos, end - pos));
        pos = end + 1;
    }
    return tokens;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) {
        return 0.0;
    }
    std::size_t shared = 0;
    for (const auto& x : a) {
        shared += b.count(x);
    }
    return static_cast<double>(shared) / static_cast<double>(a.size() + b.size() - shared);
}

std::vector<ConceptMapping> discover_mappings(const Ontology& local, const Ontology& global,
                                              const SharedInstances* shared, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        throw Error(Errc::InvalidValue, "threshold must lie in (0, 1]");
    }
    static const std::set<std::string> none;
    auto instances = [shared](const std::string& uri) -> const std::set<std::string>& {
        if (shared == nullptr) {
            return none;
        }
        auto it = shared->find(uri);
        return it == shared->end() ? none : it->second;
    };

    struct GlobalEntry {
        const MedicalConcept* concept_;
        std::string normalized;
        std::set<std::string> tokens;
    };
    std::vector<GlobalEntry> globals;
    for (const auto& g : global.concepts()) {
        globals.push_back({global.find(g.uri), normalize_label(g.label), label_tokens(g.label)});
    }

    std::vector<ConceptMapping> out;
    for (const auto& l : local.concepts()) {
        const auto normalized = normalize_label(l.label);
        const auto tokens = label_tokens(l.label);
        const auto& local_instances = instances(l.uri);

        double best = -1.0;
        std::vector<ConceptMapping> tied;
        for (const auto& g : globals) {
            double score = 0.0;
            MappingMethod method = MappingMethod::TokenOverlap;
            if (!normalized.empty() && normalized == g.normalized) {
                score = 1.0;
                method = MappingMethod::ExactLabel;
            } else {
                score = jaccard(tokens, g.tokens);
                const auto& global_instances = instances(g.concept_->uri);
                if (!local_instances.empty() && !global_instances.empty()) {
                    const double by_instances = jaccard(local_instances, global_instances);
                    if (by_instances > score) {
                        score = by_instances;
                        method = MappingMethod::SharedInstances;
                    }
                }
            }
            if (score > best) {
                best = score;
                tied.clear();
            }
            if (score == best) {
                tied.push_back({l.uri, g.concept_->uri, score, method});
            }
        }
        if (best < threshold || tied.empty()) {
            continue;
        }
        if (tied.size() > 1) {
            std::string candidates;
            for (const auto& t : tied) {
                candidates += (candidates.empty() ? "" : ", ") + t.global_uri;
            }
            throw Error(Errc::AmbiguousMapping, "AmbiguousMapping(" + l.uri + "): " + candidates);
        }
        out.push_back(tied.front());
    }
    return out;
}

namespace {

std::string format_confidence(double value) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, ptr);
}

} // namespace

std::string serialize_mappings(const std::vector<ConceptMapping>& mappings) {
    std::string out;
    for (const auto& m : mappings) {
        out += "map " + m.local_uri + " " + m.global_uri + " " + format_confidence(m.confidence) + " " +
               std::string(to_string(m.method)) + "\n";
    }
    return out;
}

std::vector<ConceptMapping> parse_mappings(std::string_view text) {
    std::vector<ConceptMapping> out;
    for_each_declaration(text, [&out](LineCursor& cursor) {
        if (cursor.word() != "map") {
            cursor.fail("expected 'map'");
        }
        ConceptMapping m;
        m.local_uri = cursor.word();
        m.global_uri = cursor.word();
        const auto confidence = cursor.word();
        auto [ptr, ec] = std::from_chars(confidence.data(), confidence.data() + confidence.size(), m.confidence);
        if (ec != std::errc{} || ptr != confidence.data() + confidence.size() || m.confidence < 0.0 ||
            m.confidence > 1.0) {
            cursor.fail("confidence must be a number in [0, 1]");
        }
        const auto method = cursor.word();
        auto parsed = parse_mapping_method(method);
        if (!parsed) {
            cursor.fail("unknown mapping method '" + method + "'");
        }
        m.method = *parsed;
        if (!cursor.at_end()) {
            cursor.fail("trailing text after mapping");
        }
        out.push_back(std::move(m));
    });
    return out;
}

void check_mappings(const std::vector<ConceptMapping>& mappings, const Ontology& local, const Ontology& global) {
    std::set<std::string> seen;
    for (const auto& m : mappings) {
        if (!local.contains(m.local_uri)) {
            throw Error(Errc::UnknownConcept, "mapping from unknown local concept '" + m.local_uri + "'");
        }
        if (!global.contains(m.global_uri)) {
            throw Error(Errc::UnknownConcept, "mapping to unknown global concept '" + m.global_uri + "'");
        }
        if (!seen.insert(m.local_uri).second) {
            throw Error(Errc::DuplicateId, "local concept '" + m.local_uri + "' is mapped twice");
        }
    }
}

} // namespace hec
