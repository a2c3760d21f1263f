#include "hec/federation.hpp"

#include "hec/error.hpp"
#include "io_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <future>
#include <thread>

namespace hec {

std::vector<ConceptMapping> identity_mappings(const Ontology& ontology) {
    std::vector<ConceptMapping> out;
    for (const auto& c : ontology.concepts()) {
        out.push_back({c.uri, c.uri, 1.0, MappingMethod::Manual});
    }
    return out;
}

namespace {

Expr translate_expr(const Expr& e, const std::map<std::string, std::set<std::string>>& inverse,
                    std::set<std::string>& dropped) {
    auto map_set = [&](const std::set<std::string>& globals) -> Expr {
        ConceptIsAnyOf local;
        for (const auto& g : globals) {
            auto it = inverse.find(g);
            if (it == inverse.end()) {
                dropped.insert(g);
                continue;
            }
            local.uris.insert(it->second.begin(), it->second.end());
        }
        if (local.uris.empty()) {
            return Constant{false};
        }
        return local;
    };
    if (const auto* c = std::get_if<ConceptIs>(&e.node)) {
        return map_set({c->uri});
    }
    if (const auto* c = std::get_if<ConceptIsAnyOf>(&e.node)) {
        return map_set(c->uris);
    }
    if (const auto* a = std::get_if<AndExpr>(&e.node)) {
        AndExpr out;
        for (const auto& o : a->operands) {
            out.operands.push_back(translate_expr(o, inverse, dropped));
        }
        return out;
    }
    if (const auto* a = std::get_if<OrExpr>(&e.node)) {
        OrExpr out;
        for (const auto& o : a->operands) {
            out.operands.push_back(translate_expr(o, inverse, dropped));
        }
        return out;
    }
    if (const auto* n = std::get_if<NotExpr>(&e.node)) {
        return NotExpr{translate_expr(*n->operand, inverse, dropped)};
    }
    return e;
}

} // namespace

Translation translate(const QueryAst& global_query, const FederationNode& node) {
    std::map<std::string, std::set<std::string>> inverse;
    for (const auto& m : node.mappings) {
        inverse[m.global_uri].insert(m.local_uri);
    }
    std::set<std::string> dropped;
    Translation t;
    t.query.target = global_query.target;
    t.query.predicate = translate_expr(global_query.predicate, inverse, dropped);
    t.dropped.assign(dropped.begin(), dropped.end());
    return t;
}

// =============================================================================
// Gateway
// =============================================================================

Gateway::Gateway(std::shared_ptr<const Ontology> global_ontology, PredicateSet expansion)
    : global_(std::move(global_ontology)), expansion_(std::move(expansion)) {
    if (!global_) {
        throw Error(Errc::InvalidValue, "gateway needs a global ontology");
    }
}

void Gateway::register_node(FederationNode node) {
    if (node.node_id.empty() || !node.store || !node.local_ontology) {
        throw Error(Errc::InvalidValue, "node needs an id, a store and a local ontology");
    }
    check_mappings(node.mappings, *node.local_ontology, *global_);
    std::unique_lock lock(mutex_);
    if (nodes_.contains(node.node_id)) {
        throw Error(Errc::DuplicateNode, "node '" + node.node_id + "' is already registered");
    }
    auto id = node.node_id;
    nodes_.emplace(std::move(id), NodeSlot{std::move(node), std::nullopt});
}

void Gateway::remove_node(std::string_view node_id) {
    std::unique_lock lock(mutex_);
    auto it = nodes_.find(node_id);
    if (it == nodes_.end()) {
        throw Error(Errc::UnknownNode, "no node '" + std::string(node_id) + "'");
    }
    nodes_.erase(it);
}

std::vector<std::string> Gateway::nodes() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, slot] : nodes_) {
        out.push_back(id);
    }
    return out;
}

void Gateway::inject_fault(std::string_view node_id, Fault fault) {
    std::unique_lock lock(mutex_);
    auto it = nodes_.find(node_id);
    if (it == nodes_.end()) {
        throw Error(Errc::UnknownNode, "no node '" + std::string(node_id) + "'");
    }
    it->second.fault = fault;
}

void Gateway::clear_fault(std::string_view node_id) {
    std::unique_lock lock(mutex_);
    auto it = nodes_.find(node_id);
    if (it == nodes_.end()) {
        throw Error(Errc::UnknownNode, "no node '" + std::string(node_id) + "'");
    }
    it->second.fault.reset();
}

namespace {

// Unbounded starts first, then by start date, unresolvable last.
std::pair<int, Date> time_rank(const ResultRow& row) {
    if (!row.time) {
        return {2, Date{}};
    }
    if (!row.time->start) {
        return {0, Date{}};
    }
    return {1, *row.time->start};
}

} // namespace

FederatedResult Gateway::execute(const QueryAst& global_query, bool enhance_query) const {
    std::vector<NodeSlot> snapshot;
    {
        std::shared_lock lock(mutex_);
        for (const auto& [id, slot] : nodes_) {
            snapshot.push_back(slot);
        }
    }
    if (snapshot.empty()) {
        throw Error(Errc::NoNodes, "no nodes registered");
    }
    const QueryAst global = enhance_query ? enhance(global_query, *global_, expansion_) : global_query;

    FederatedResult result;
    result.target = global.target;
    std::vector<std::future<ResultSet>> replies;
    for (const auto& slot : snapshot) {
        if (slot.fault && slot.fault->kind == FaultKind::Unreachable) {
            result.unreachable.push_back(slot.node.node_id);
            continue;
        }
        auto translation = translate(global, slot.node);
        for (const auto& uri : translation.dropped) {
            result.dropped.push_back({slot.node.node_id, uri});
        }
        const auto delay = slot.fault ? slot.fault->delay : std::chrono::milliseconds(0);
        replies.push_back(std::async(std::launch::async, [&slot, delay, query = std::move(translation.query)] {
            if (delay.count() > 0) {
                std::this_thread::sleep_for(delay);
            }
            const auto& store = *slot.node.store;
            auto bound = bind(query, store.registry());
            auto view = store.read();
            return hec::execute(optimize(bound, view.stats(), view.registry()), view);
        }));
    }

    std::vector<ResultRow> rows;
    std::exception_ptr first_error;
    for (auto& reply : replies) {
        try {
            auto part = reply.get();
            std::move(part.rows.begin(), part.rows.end(), std::back_inserter(rows));
        } catch (...) {
            if (!first_error) {
                first_error = std::current_exception();
            }
        }
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }

    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        return std::tie(a.pseudonym, a.event_id, a.variable_id, a.node_id) <
               std::tie(b.pseudonym, b.event_id, b.variable_id, b.node_id);
    });
    rows.erase(std::unique(rows.begin(), rows.end(),
                           [](const ResultRow& a, const ResultRow& b) { return a.key() == b.key(); }),
               rows.end());
    std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        if (a.pseudonym != b.pseudonym) {
            return a.pseudonym < b.pseudonym;
        }
        return time_rank(a) < time_rank(b);
    });
    result.rows = std::move(rows);
    result.partial = !result.unreachable.empty();
    std::sort(result.dropped.begin(), result.dropped.end());
    return result;
}

FederatedResult Gateway::execute(std::string_view query_text, bool enhance_query) const {
    return execute(parse_query(query_text), enhance_query);
}

std::string FederatedResult::serialize() const {
    nlohmann::json j;
    j["target"] = std::string(to_string(target));
    j["partial"] = partial;
    j["unreachable"] = unreachable;
    auto dropped_json = nlohmann::json::array();
    for (const auto& d : dropped) {
        dropped_json.push_back({{"node", d.node_id}, {"concept", d.concept_uri}});
    }
    j["dropped"] = std::move(dropped_json);
    auto rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        rows_json.push_back(nlohmann::json::parse(row_to_json(r)));
    }
    j["rows"] = std::move(rows_json);
    return j.dump(2) + "\n";
}

std::unique_ptr<Gateway> Gateway::load_config(const std::filesystem::path& path) {
    const auto base = path.parent_path();
    nlohmann::json config;
    try {
        config = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::MalformedRecord, "federation config: " + std::string(e.what()));
    }
    auto resolve = [&base](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    try {
        auto global = std::make_shared<const Ontology>(
            Ontology::load(resolve(config.at("global_ontology").get<std::string>())));
        auto gateway = std::make_unique<Gateway>(global);
        for (const auto& entry : config.at("nodes")) {
            FederationNode node;
            node.node_id = entry.at("node_id").get<std::string>();
            auto local = std::make_shared<const Ontology>(
                Ontology::load(resolve(entry.at("ontology_file").get<std::string>())));
            std::shared_ptr<NodeStore> store =
                NodeStore::load(resolve(entry.at("data_dir").get<std::string>()), node.node_id);
            node.store = std::move(store);
            node.mappings = entry.contains("mapping_file")
                                ? parse_mappings(read_text_file(resolve(entry.at("mapping_file").get<std::string>())))
                                : identity_mappings(*local);
            node.local_ontology = std::move(local);
            gateway->register_node(std::move(node));
        }
        return gateway;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::MalformedRecord, "federation config: " + std::string(e.what()));
    }
}

} // namespace hec
