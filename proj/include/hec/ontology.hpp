/**
 * @file ontology.hpp
 * @brief Semantics layer: URI-identified medical concepts, typed relations,
 *        concept bindings, fragment extraction, local-to-global mappings and
 *        information-content similarity.
 *
 * An Ontology is built once (load or add_* calls) and then shared read-only,
 * usually as `std::shared_ptr<const Ontology>`. All const members are safe to
 * call concurrently.
 */

#ifndef HEC_ONTOLOGY_HPP
#define HEC_ONTOLOGY_HPP

#include "hec/registry.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace hec {

enum class ConceptGroup { Anatomical, Symptom, Disease, TreatmentDrug };

std::string_view to_string(ConceptGroup group) noexcept;
std::optional<ConceptGroup> parse_concept_group(std::string_view text) noexcept;

/// Relation vocabulary. Edges point child -> parent (subject -> object).
enum class Predicate { is_a, part_of, regional_part_of, associated_with };

std::string_view to_string(Predicate predicate) noexcept;
std::optional<Predicate> parse_predicate(std::string_view text) noexcept;

using PredicateSet = std::set<Predicate>;

/// The predicates query expansion follows unless told otherwise.
inline const PredicateSet default_expansion_predicates{Predicate::part_of, Predicate::is_a,
                                                       Predicate::regional_part_of};

struct MedicalConcept {
    std::string uri;
    std::string label;
    ConceptGroup group = ConceptGroup::Anatomical;

    friend bool operator==(const MedicalConcept&, const MedicalConcept&) = default;
};

struct ConceptRelation {
    std::string subject;
    Predicate predicate = Predicate::is_a;
    std::string object;

    friend auto operator<=>(const ConceptRelation&, const ConceptRelation&) = default;
};

struct ConceptBinding {
    std::string cvt_id;
    std::string concept_uri;

    friend bool operator==(const ConceptBinding&, const ConceptBinding&) = default;
};

enum class MappingMethod { ExactLabel, TokenOverlap, SharedInstances, Manual };

std::string_view to_string(MappingMethod method) noexcept;
std::optional<MappingMethod> parse_mapping_method(std::string_view text) noexcept;

struct ConceptMapping {
    std::string local_uri;
    std::string global_uri;
    double confidence = 0.0;
    MappingMethod method = MappingMethod::Manual;

    friend bool operator==(const ConceptMapping&, const ConceptMapping&) = default;
};

using AnnotationCounts = std::map<std::string, std::uint64_t, std::less<>>;
using SharedInstances = std::map<std::string, std::set<std::string>, std::less<>>;

class Ontology {
public:
    /// Errors: DuplicateURI, InvalidValue (empty uri/label).
    void add_concept(const MedicalConcept& concept_);

    /**
     * Adds a typed edge. Re-adding an existing edge is a no-op. Errors:
     * UnknownEndpoint, CycleIntroduced when the edge would close a cycle in
     * the is_a, part_of or regional_part_of sub-graph (or is a self loop).
     */
    void add_relation(const ConceptRelation& relation);

    /// Binds a CVT to a concept. With a registry the CVT must exist there
    /// (UnknownCVT). Errors: UnknownConcept, DuplicateId (CVT already bound).
    void add_binding(const ConceptBinding& binding, const Registry* registry = nullptr);

    bool contains(std::string_view uri) const;
    const MedicalConcept* find(std::string_view uri) const;
    std::optional<std::string> concept_for_cvt(std::string_view cvt_id) const;

    std::vector<MedicalConcept> concepts() const;  // by uri
    const std::vector<ConceptRelation>& relations() const noexcept { return relations_; }
    std::vector<ConceptBinding> bindings() const;   // by cvt id
    std::size_t size() const noexcept { return concepts_.size(); }

    /// Resolver usable for variable validation.
    ConceptResolver resolver() const;

    /**
     * Every concept other than `root` that reaches `root` through a chain of
     * child->parent edges whose predicates are in `predicates`, within
     * `max_depth` edges when given. Sorted by uri. Throws UnknownConcept.
     */
    std::vector<std::string> descendants(std::string_view root, const PredicateSet& predicates,
                                         std::optional<std::size_t> max_depth = std::nullopt) const;

    /// `uri` plus everything reachable upward along is_a.
    std::set<std::string> is_a_ancestors(std::string_view uri) const;

    /**
     * Self-contained sub-ontology: every concept within `depth` edges (any
     * predicate, either direction) of a root, the relations among them and
     * the bindings onto them. Throws UnknownConcept.
     */
    Ontology extract_fragment(const std::set<std::string>& roots, std::size_t depth) const;

    /// -ln p(c), with p(c) the annotation mass of c and its is_a
    /// descendants over the mass of c's is_a component.
    /// Errors: UnknownConcept, ZeroCorpus.
    double information_content(std::string_view uri, const AnnotationCounts& counts) const;

    /**
     * Resnik similarity: the largest information content over the common
     * is_a ancestors of `a` and `b` (each counts as its own ancestor).
     * Ancestors with no annotation mass carry no information and are
     * skipped. Errors: UnknownConcept, NoCommonAncestor, ZeroCorpus.
     */
    double resnik_similarity(std::string_view a, std::string_view b, const AnnotationCounts& counts) const;

    /// Line format: `concept <uri> <group> "<label>"`, `rel <s> <p> <o>`,
    /// `bind <cvt_id> <uri>`, `#` comments.
    std::string serialize() const;
    static Ontology parse(std::string_view text);
    static Ontology load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

private:
    struct Edge {
        Predicate predicate;
        std::string other;
    };

    bool reaches_upward(const std::string& from, const std::string& target, Predicate predicate) const;
    std::set<std::string> is_a_component(std::string_view uri) const;
    std::uint64_t effective_count(const std::string& uri, const AnnotationCounts& counts) const;

    std::map<std::string, MedicalConcept, std::less<>> concepts_;
    std::vector<ConceptRelation> relations_;
    std::set<ConceptRelation> relation_set_;
    std::map<std::string, std::vector<Edge>, std::less<>> parents_;   // subject -> objects
    std::map<std::string, std::vector<Edge>, std::less<>> children_;  // object -> subjects
    std::map<std::string, std::string, std::less<>> bindings_;        // cvt id -> uri
};

// =============================================================================
// Mapping discovery (hybrid local -> global alignment)
// =============================================================================

/// Lowercase, punctuation removed, whitespace tokens sorted and single-spaced.
std::string normalize_label(std::string_view label);

/// Distinct tokens of the normalized label.
std::set<std::string> label_tokens(std::string_view label);

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

/**
 * Proposes at most one global concept per local concept. A candidate's score
 * is the best of: 1.0 for equal normalized labels, label token Jaccard, and
 * (when `shared` is given) Jaccard of the two concepts' instance sets. The
 * best candidate is emitted when its score reaches `threshold`.
 *
 * Errors: InvalidValue when threshold is outside (0, 1]; AmbiguousMapping
 * when two global concepts tie for the emitted score.
 */
std::vector<ConceptMapping> discover_mappings(const Ontology& local, const Ontology& global,
                                              const SharedInstances* shared, double threshold);

/// `map <local> <global> <confidence> <method>` lines, `#` comments.
std::string serialize_mappings(const std::vector<ConceptMapping>& mappings);
std::vector<ConceptMapping> parse_mappings(std::string_view text);

/// Checks mapping endpoints and the one-global-per-local rule.
/// Errors: UnknownConcept, DuplicateId.
void check_mappings(const std::vector<ConceptMapping>& mappings, const Ontology& local, const Ontology& global);

} // namespace hec

#endif // HEC_ONTOLOGY_HPP
