/**
 * @file federation.hpp
 * @brief Gateway over several in-process nodes: per-node query translation
 *        through local-to-global concept mappings, concurrent fan-out,
 *        person-centric merging and simulated faults.
 *
 * CVT and MET identifiers are shared by every node; only concept URIs are
 * node-specific and go through the mappings.
 */

#ifndef HEC_FEDERATION_HPP
#define HEC_FEDERATION_HPP

#include "hec/ontology.hpp"
#include "hec/query.hpp"
#include "hec/store.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace hec {

struct FederationNode {
    std::string node_id;
    std::shared_ptr<NodeStore> store;
    std::shared_ptr<const Ontology> local_ontology;
    std::vector<ConceptMapping> mappings;  // local -> global
};

/// Every concept of `ontology` mapped to itself.
std::vector<ConceptMapping> identity_mappings(const Ontology& ontology);

struct DroppedConcept {
    std::string node_id;
    std::string concept_uri;  // global uri with no local counterpart
    friend auto operator<=>(const DroppedConcept&, const DroppedConcept&) = default;
};

struct FederatedResult {
    QueryTarget target = QueryTarget::Events;
    std::vector<ResultRow> rows;  // grouped by pseudonym, then resolved time
    bool partial = false;
    std::vector<std::string> unreachable;
    std::vector<DroppedConcept> dropped;

    /// Deterministic JSON document.
    std::string serialize() const;
};

struct Translation {
    QueryAst query;
    std::vector<std::string> dropped;  // global uris without a local mapping
};

/**
 * Rewrites global concept sets into the node's local uris via the inverse
 * mapping. A set left empty becomes FALSE. Other atoms pass through.
 */
Translation translate(const QueryAst& global_query, const FederationNode& node);

enum class FaultKind { Unreachable, SlowBy };

struct Fault {
    FaultKind kind = FaultKind::Unreachable;
    std::chrono::milliseconds delay{0};  // SlowBy only
};

class Gateway {
public:
    explicit Gateway(std::shared_ptr<const Ontology> global_ontology,
                     PredicateSet expansion = default_expansion_predicates);

    /// Errors: DuplicateNode, InvalidValue (missing store or ontology),
    /// UnknownConcept / DuplicateId from mapping checks.
    void register_node(FederationNode node);
    /// Errors: UnknownNode.
    void remove_node(std::string_view node_id);
    std::vector<std::string> nodes() const;

    /// Errors: UnknownNode.
    void inject_fault(std::string_view node_id, Fault fault);
    void clear_fault(std::string_view node_id);

    const Ontology& global_ontology() const noexcept { return *global_; }

    /**
     * Enhances once against the global ontology (unless `enhance_query` is
     * false), translates per node and runs every reachable node concurrently
     * on a snapshot of the node set. Rows are deduplicated by row key,
     * keeping the smallest node id. Errors: NoNodes, UnknownConcept, and the
     * first node error in node id order.
     */
    FederatedResult execute(const QueryAst& global_query, bool enhance_query = true) const;
    FederatedResult execute(std::string_view query_text, bool enhance_query = true) const;

    /**
     * Builds a gateway from a JSON config:
     * `{"global_ontology": path, "nodes": [{"node_id", "data_dir",
     * "ontology_file", "mapping_file"}]}`, paths relative to the file.
     * An absent mapping_file means identity mappings.
     */
    static std::unique_ptr<Gateway> load_config(const std::filesystem::path& path);

private:
    struct NodeSlot {
        FederationNode node;
        std::optional<Fault> fault;
    };

    std::shared_ptr<const Ontology> global_;
    PredicateSet expansion_;
    std::map<std::string, NodeSlot, std::less<>> nodes_;
    mutable std::shared_mutex mutex_;
};

} // namespace hec

#endif // HEC_FEDERATION_HPP
