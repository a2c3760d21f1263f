#include "hec/cli.hpp"

#include "hec/error.hpp"
#include "hec/query.hpp"
#include "io_util.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

namespace hec {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Bad arguments discovered after CLI11 has accepted the command line.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Format { Table, JsonLines };

struct Rows {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

// Display width of UTF-8 text: continuation bytes take no column.
std::size_t display_width(std::string_view s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) {
        return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
    }));
}

class Printer {
public:
    Printer(Format format, std::ostream& out) : format_(format), out_(out) {}

    void print(const Rows& t) {
        if (format_ == Format::JsonLines) {
            for (const auto& row : t.rows) {
                json j = json::object();
                for (std::size_t i = 0; i < t.columns.size(); ++i) {
                    j[t.columns[i]] = row[i];
                }
                out_ << j.dump() << '\n';
            }
            return;
        }
        std::vector<std::size_t> width(t.columns.size());
        for (std::size_t i = 0; i < t.columns.size(); ++i) {
            width[i] = display_width(t.columns[i]);
            for (const auto& row : t.rows) {
                width[i] = std::max(width[i], display_width(row[i]));
            }
        }
        auto line = [&](const std::vector<std::string>& cells) {
            std::string s;
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i > 0) {
                    s += " | ";
                }
                s += cells[i];
                if (i + 1 < cells.size()) {
                    s.append(width[i] - display_width(cells[i]), ' ');
                }
            }
            out_ << s << '\n';
        };
        line(t.columns);
        std::string rule;
        for (std::size_t i = 0; i < width.size(); ++i) {
            rule += (i > 0 ? "-+-" : "") + std::string(width[i], '-');
        }
        out_ << rule << '\n';
        for (const auto& row : t.rows) {
            line(row);
        }
    }

    // Free text; a single {"<key>": text} object in JSON Lines mode.
    void note(const std::string& key, const std::string& text) {
        if (format_ == Format::JsonLines) {
            out_ << json{{key, text}}.dump() << '\n';
        } else {
            out_ << text;
            if (text.empty() || text.back() != '\n') {
                out_ << '\n';
            }
        }
    }

private:
    Format format_;
    std::ostream& out_;
};

struct Config {
    std::string data_dir;
    std::string registry_file;
    std::string ontology_file;
    std::string federation_file;
    std::string format = "table";

    fs::path registry_path() const {
        return registry_file.empty() ? fs::path(data_dir) / "registry.json" : fs::path(registry_file);
    }
    fs::path ontology_path() const {
        return ontology_file.empty() ? fs::path(data_dir) / "ontology.txt" : fs::path(ontology_file);
    }
};

void require_data_dir(const Config& cfg) {
    if (!fs::is_directory(cfg.data_dir)) {
        throw Error(Errc::IoError, "data directory '" + cfg.data_dir + "' does not exist");
    }
}

std::string read_if_exists(const fs::path& p) {
    return fs::exists(p) ? read_text_file(p) : std::string{};
}

std::optional<Ontology> load_ontology(const Config& cfg) {
    const auto path = cfg.ontology_path();
    if (!fs::exists(path)) {
        return std::nullopt;
    }
    return Ontology::load(path);
}

std::unique_ptr<NodeStore> load_store(const Config& cfg, const Ontology* ontology) {
    const fs::path dir(cfg.data_dir);
    const auto reg_path = cfg.registry_path();
    Registry registry = fs::exists(reg_path) ? Registry::load(reg_path) : Registry{};
    auto store = NodeStore::from_serialized("local", std::move(registry), read_if_exists(dir / "patients.jsonl"),
                                            read_if_exists(dir / "visits.jsonl"),
                                            read_if_exists(dir / "events.jsonl"));
    if (ontology) {
        store->set_concept_resolver(ontology->resolver());
    }
    return store;
}

void save_store(const Config& cfg, const NodeStore& store) {
    const fs::path dir(cfg.data_dir);
    fs::create_directories(dir);
    store.registry().save(cfg.registry_path());
    write_text_file(dir / "patients.jsonl", store.serialize_patients());
    write_text_file(dir / "visits.jsonl", store.serialize_visits());
    write_text_file(dir / "events.jsonl", store.serialize_events());
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) {
            out += sep;
        }
        out += parts[i];
    }
    return out;
}

std::string format_decimal(double v) {
    std::ostringstream s;
    s.precision(6);
    s << std::fixed << v;
    return s.str();
}

// --- result rows -------------------------------------------------------------

std::pair<std::string, std::string> time_cells(const std::optional<ResolvedInterval>& t) {
    if (!t) {
        return {"unresolved", "unresolved"};
    }
    return {t->start ? t->start->to_string() : "open", t->end ? t->end->to_string() : "open"};
}

std::string values_cell(const std::vector<ClinicalVariable>& vars) {
    std::vector<std::string> parts;
    for (const auto& v : vars) {
        parts.push_back(v.cvt_id + "=" + value_text(v.payload));
    }
    return join(parts, "; ");
}

Rows result_rows(const std::vector<ResultRow>& rows) {
    Rows t{{"pseudonym", "event_id", "variable_id", "event_type", "start", "end", "node", "values"}, {}};
    for (const auto& r : rows) {
        auto [start, end] = r.event_id.empty() ? std::pair<std::string, std::string>{} : time_cells(r.time);
        t.rows.push_back({r.pseudonym, r.event_id, r.variable_id, r.event_type, start, end, r.node_id,
                          values_cell(r.variables)});
    }
    return t;
}

// --- metadata ----------------------------------------------------------------

Rows registry_rows(const Registry& r) {
    Rows t{{"kind", "id", "detail"}, {}};
    for (const auto& u : r.units()) {
        t.rows.push_back({"unit", u.symbol, u.description.value_or("")});
    }
    for (const auto& c : r.classifications()) {
        t.rows.push_back({"classification", c.name, join(c.items, ", ")});
    }
    for (const auto& c : r.cvts()) {
        std::string detail{to_string(c.category)};
        if (c.unit) {
            detail += " [" + *c.unit + "]";
        }
        if (c.classification) {
            detail += " {" + *c.classification + "}";
        }
        detail += " @" + std::string(to_string(c.vertical_level));
        t.rows.push_back({"cvt", c.id, detail});
    }
    for (const auto& m : r.mets()) {
        t.rows.push_back({"met", m.id,
                          join({m.member_cvts.begin(), m.member_cvts.end()}, ", ") + " @" +
                              std::string(to_string(m.vertical_level))});
    }
    return t;
}

// --- ontology ----------------------------------------------------------------

Rows ontology_rows(const Ontology& o) {
    Rows t{{"kind", "uri", "detail"}, {}};
    for (const auto& c : o.concepts()) {
        t.rows.push_back({"concept", c.uri, std::string(to_string(c.group)) + " \"" + c.label + "\""});
    }
    for (const auto& r : o.relations()) {
        t.rows.push_back({"rel", r.subject, std::string(to_string(r.predicate)) + " " + r.object});
    }
    for (const auto& b : o.bindings()) {
        t.rows.push_back({"bind", b.concept_uri, b.cvt_id});
    }
    return t;
}

AnnotationCounts read_counts(const fs::path& path) {
    AnnotationCounts counts;
    try {
        const auto doc = json::parse(read_text_file(path));
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            counts[it.key()] = it.value().get<std::uint64_t>();
        }
    } catch (const json::exception& e) {
        throw Error(Errc::MalformedRecord, "counts file: " + std::string(e.what()));
    }
    return counts;
}

SharedInstances read_instances(const fs::path& path) {
    SharedInstances shared;
    try {
        const auto doc = json::parse(read_text_file(path));
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            shared[it.key()] = it.value().get<std::set<std::string>>();
        }
    } catch (const json::exception& e) {
        throw Error(Errc::MalformedRecord, "instances file: " + std::string(e.what()));
    }
    return shared;
}

Ontology require_ontology(const Config& cfg) {
    auto o = load_ontology(cfg);
    if (!o) {
        throw Error(Errc::IoError, "no ontology at '" + cfg.ontology_path().string() + "'");
    }
    return std::move(*o);
}

// --- dicom -------------------------------------------------------------------

struct SidecarGroup {
    std::string pseudonym;
    Date study_date;
    std::vector<std::pair<std::string, DicomData>> instances;  // (file, data)
};

std::vector<ClinicalVariable> dicom_variables(const std::string& event_id, const SidecarGroup& group,
                                              const std::string& cvt, const std::string& series_cvt,
                                              const std::string& study_uid, const std::string& series_uid) {
    std::vector<ClinicalVariable> vars;
    std::vector<std::pair<std::string, DicomData>> by_id;
    for (std::size_t i = 0; i < group.instances.size(); ++i) {
        auto id = event_id + "#" + std::to_string(i);
        vars.push_back({id, cvt, group.instances[i].second});
        by_id.emplace_back(id, group.instances[i].second);
    }
    if (!series_cvt.empty()) {
        vars.push_back({event_id + "#series", series_cvt, assemble_series(by_id, study_uid, series_uid)});
    }
    return vars;
}

// --- demo federation -----------------------------------------------------------

Registry demo_registry() {
    Registry r;
    r.define_unit(Unit{"mL/m²", "millilitres per square metre"});
    r.define_classification(Classification{"Severity", {"No", "Mild", "Moderate", "Severe"}});
    r.define_cvt({"SysLVol", "Systolic LV volume", VariableCategory::Measurement, "mL/m²", std::nullopt,
                  VerticalLevel::Organ});
    r.define_cvt({"RVDilation", "RV dilation", VariableCategory::ObservationByClassification, std::nullopt,
                  "Severity", VerticalLevel::Organ});
    r.define_cvt({"TumourLoc", "Tumour Location", VariableCategory::MedicalConceptInstance, std::nullopt,
                  std::nullopt, VerticalLevel::Organ});
    r.define_cvt({"ImageLoc", "Imaged anatomy", VariableCategory::MedicalConceptInstance, std::nullopt,
                  std::nullopt, VerticalLevel::Organ});
    r.define_met({"CardiacMRI", "Cardiac MRI examination", {"SysLVol", "RVDilation"}, VerticalLevel::Organ});
    r.define_met({"TumourAssessment", "Tumour assessment", {"TumourLoc"}, VerticalLevel::Organ});
    r.define_met({"XRayImaging", "X-ray imaging", {"ImageLoc"}, VerticalLevel::Organ});
    return r;
}

struct DemoConcept {
    const char* global;
    const char* label;
    ConceptGroup group;
};

constexpr DemoConcept demo_concepts[] = {
    {"hec:Jaw", "Jaw", ConceptGroup::Anatomical},
    {"hec:Tooth", "Tooth", ConceptGroup::Anatomical},
    {"hec:Molar", "Molar tooth", ConceptGroup::Anatomical},
    {"fma:Brain", "Brain", ConceptGroup::Anatomical},
    {"fma:Cerebellum", "Cerebellum", ConceptGroup::Anatomical},
    {"hec:Heart", "Heart", ConceptGroup::Anatomical},
};

// Builds an ontology over the demo vocabulary with uris renamed by `rename`.
template <typename Rename>
Ontology demo_ontology(Rename rename) {
    Ontology o;
    for (const auto& c : demo_concepts) {
        o.add_concept({rename(c.global), c.label, c.group});
    }
    o.add_relation({rename("hec:Tooth"), Predicate::part_of, rename("hec:Jaw")});
    o.add_relation({rename("hec:Molar"), Predicate::is_a, rename("hec:Tooth")});
    o.add_relation({rename("fma:Cerebellum"), Predicate::regional_part_of, rename("fma:Brain")});
    return o;
}

struct DemoEvent {
    const char* pseudonym;
    const char* birth;
    const char* event_id;
    const char* date;
    const char* met;
    std::vector<ClinicalVariable> variables;
};

ClinicalVariable image_of(std::string uri) {
    return {"", "ImageLoc", MedicalConceptInstance{std::move(uri)}};
}

std::shared_ptr<NodeStore> demo_store(const std::string& node_id, const Ontology& local,
                                      const std::vector<DemoEvent>& events) {
    auto store = std::make_shared<NodeStore>(node_id, demo_registry());
    store->set_concept_resolver(local.resolver());
    for (const auto& e : events) {
        const auto date = Date::parse_or_throw(e.date);
        PatientRecord patient{e.pseudonym, Sex::Unknown, Date::parse_or_throw(e.birth), {}, {}};
        Visit visit{std::string(e.pseudonym) + "@" + e.date, e.pseudonym,
                    VisitPurpose{VisitPurposeKind::FollowUp, {}}, date, {}};
        MedicalEvent ev;
        ev.event_id = e.event_id;
        ev.event_type = e.met;
        ev.visit = visit.visit_id;
        ev.time = Instant{date};
        ev.variables = e.variables;
        ev.kind = EventKind{EventKindTag::Examination, {}};
        store->record_event(patient, visit, std::move(ev));
    }
    return store;
}

// --- dispatch ------------------------------------------------------------------

std::pair<std::string, std::chrono::milliseconds> parse_slow(const std::string& spec) {
    const auto colon = spec.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == spec.size()) {
        throw UsageError("--slow expects <node>:<ms>, got '" + spec + "'");
    }
    const auto ms_text = spec.substr(colon + 1);
    if (!std::all_of(ms_text.begin(), ms_text.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
        ms_text.size() > 9) {
        throw UsageError("--slow expects a millisecond count, got '" + ms_text + "'");
    }
    return {spec.substr(0, colon), std::chrono::milliseconds(std::stol(ms_text))};
}

void print_federated(Printer& p, const FederatedResult& r) {
    p.print(result_rows(r.rows));
    std::vector<std::string> dropped;
    for (const auto& d : r.dropped) {
        dropped.push_back(d.node_id + ":" + d.concept_uri);
    }
    p.print(Rows{{"rows", "partial", "unreachable", "dropped"},
                 {{std::to_string(r.rows.size()), r.partial ? "true" : "false", join(r.unreachable, ","),
                   join(dropped, ",")}}});
}

CLI::App* deepest_parsed(CLI::App* app) {
    for (auto* sub : app->get_subcommands()) {
        return deepest_parsed(sub);
    }
    return app;
}

} // namespace

std::unique_ptr<Gateway> demo_gateway() {
    auto identity = [](const std::string& uri) { return uri; };
    auto global = std::make_shared<const Ontology>(demo_ontology(identity));
    auto gateway = std::make_unique<Gateway>(global);

    auto local_b = [](const std::string& uri) { return "b:" + uri.substr(uri.find(':') + 1); };
    auto local_c = [](const std::string& uri) { return "c:" + uri.substr(uri.find(':') + 1) + "_c"; };

    {
        auto onto = std::make_shared<const Ontology>(demo_ontology(identity));
        auto store = demo_store("node-a", *onto,
                                {{"P-001", "2004-03-01", "A-MRI-1", "2011-09-14", "CardiacMRI",
                                  {{"", "SysLVol", Measurement(Decimal::parse_or_throw("30.5"), "mL/m²")},
                                   {"", "RVDilation", ObservationByClassification{"Severe"}}}},
                                 {"P-001", "2004-03-01", "A-XR-1", "2012-05-10", "XRayImaging",
                                  {image_of("hec:Jaw")}},
                                 {"P-002", "2001-11-20", "A-TU-1", "2012-01-08", "TumourAssessment",
                                  {{"", "TumourLoc", MedicalConceptInstance{"fma:Cerebellum"}}}}});
        gateway->register_node({"node-a", store, onto, identity_mappings(*onto)});
    }
    struct DemoNode {
        std::string node_id;
        std::function<std::string(const std::string&)> rename;
        std::vector<DemoEvent> events;
    };
    const std::vector<DemoNode> locals{
        {"node-b", local_b,
         {{"P-003", "2006-07-15", "B-XR-1", "2013-02-20", "XRayImaging", {image_of("b:Tooth")}},
          {"P-004", "2003-05-02", "B-XR-2", "2012-10-03", "XRayImaging", {image_of("b:Molar")}},
          {"P-004", "2003-05-02", "B-XR-3", "2013-04-11", "XRayImaging", {image_of("b:Heart")}}}},
        {"node-c", local_c,
         {{"P-001", "2004-03-01", "C-XR-1", "2013-06-30", "XRayImaging", {image_of("c:Tooth_c")}},
          {"P-005", "2008-01-27", "C-XR-2", "2012-12-12", "XRayImaging", {image_of("c:Jaw_c")}},
          {"P-005", "2008-01-27", "C-MRI-1", "2013-01-15", "CardiacMRI",
           {{"", "RVDilation", ObservationByClassification{"Mild"}}}}}},
    };
    for (const auto& n : locals) {
        auto onto = std::make_shared<const Ontology>(demo_ontology(n.rename));
        auto store = demo_store(n.node_id, *onto, n.events);
        auto mappings = discover_mappings(*onto, *global, nullptr, 1.0);
        gateway->register_node({n.node_id, store, onto, std::move(mappings)});
    }
    return gateway;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Clinical data integration engine", "hecctl"};
    app.require_subcommand(1);
    app.fallthrough();
    Config cfg;
    const char* env_dir = std::getenv("HEC_DATA_DIR");
    cfg.data_dir = env_dir ? env_dir : "hec-data";
    app.add_option("--data-dir", cfg.data_dir, "Node data directory (env HEC_DATA_DIR)");
    app.add_option("--registry", cfg.registry_file, "Registry file (default <data-dir>/registry.json)");
    app.add_option("--ontology", cfg.ontology_file, "Ontology file (default <data-dir>/ontology.txt)");
    app.add_option("--federation", cfg.federation_file, "Federation config file");
    app.add_option("--format", cfg.format, "Output format")
        ->check(CLI::IsMember({"table", "jsonl"}));

    std::function<void(Printer&)> action;

    // metadata
    auto* metadata = app.add_subcommand("metadata", "Define and list metadata");
    metadata->require_subcommand(1);
    std::string define_file;
    auto* m_define = metadata->add_subcommand("define", "Merge definitions from a registry JSON file");
    m_define->add_option("file", define_file, "Registry JSON document")->required();
    m_define->callback([&] {
        action = [&](Printer& p) {
            auto incoming = Registry::parse(read_text_file(define_file));
            const auto path = cfg.registry_path();
            Registry current = fs::exists(path) ? Registry::load(path) : Registry{};
            current.merge(incoming);
            current.save(path);
            p.print(registry_rows(incoming));
        };
    });
    auto* m_list = metadata->add_subcommand("list", "List the registry");
    m_list->callback([&] {
        action = [&](Printer& p) {
            const auto path = cfg.registry_path();
            if (!fs::exists(path)) {
                throw Error(Errc::IoError, "no registry at '" + path.string() + "'");
            }
            p.print(registry_rows(Registry::load(path)));
        };
    });

    // ontology
    auto* ontology = app.add_subcommand("ontology", "Ontology tools");
    ontology->require_subcommand(1);
    std::string onto_file;
    auto* o_load = ontology->add_subcommand("load", "Check an ontology file and install it");
    o_load->add_option("file", onto_file, "Ontology text file")->required()->check(CLI::ExistingFile);
    o_load->callback([&] {
        action = [&](Printer& p) {
            auto o = Ontology::load(onto_file);
            const auto reg_path = cfg.registry_path();
            if (fs::exists(reg_path)) {
                const auto registry = Registry::load(reg_path);
                Ontology checked;
                for (const auto& c : o.concepts()) {
                    checked.add_concept(c);
                }
                for (const auto& b : o.bindings()) {
                    checked.add_binding(b, &registry);
                }
            }
            o.save(cfg.ontology_path());
            p.print(Rows{{"concepts", "relations", "bindings", "installed"},
                         {{std::to_string(o.size()), std::to_string(o.relations().size()),
                           std::to_string(o.bindings().size()), cfg.ontology_path().string()}}});
        };
    });
    std::vector<std::string> fragment_roots;
    std::size_t fragment_depth = 1;
    std::string fragment_out;
    auto* o_fragment = ontology->add_subcommand("fragment", "Extract a self-contained fragment");
    o_fragment->add_option("roots", fragment_roots, "Root concept uris")->required();
    o_fragment->add_option("--depth", fragment_depth, "Edge radius")->check(CLI::NonNegativeNumber);
    o_fragment->add_option("--out", fragment_out, "Write the fragment to this file");
    o_fragment->callback([&] {
        action = [&](Printer& p) {
            auto frag = require_ontology(cfg).extract_fragment({fragment_roots.begin(), fragment_roots.end()},
                                                               fragment_depth);
            if (!fragment_out.empty()) {
                frag.save(fragment_out);
            }
            p.print(ontology_rows(frag));
        };
    });
    std::string local_file;
    double threshold = 0.5;
    std::string instances_file;
    std::string mapping_out;
    auto* o_map = ontology->add_subcommand("map-discover", "Propose local-to-global concept mappings");
    o_map->add_option("local", local_file, "Local ontology file")->required()->check(CLI::ExistingFile);
    o_map->add_option("--threshold", threshold, "Minimum score in (0, 1]");
    o_map->add_option("--instances", instances_file, "JSON object: uri -> instance ids")
        ->check(CLI::ExistingFile);
    o_map->add_option("--out", mapping_out, "Write the mapping file here");
    o_map->callback([&] {
        action = [&](Printer& p) {
            const auto global = require_ontology(cfg);
            const auto local = Ontology::load(local_file);
            std::optional<SharedInstances> shared;
            if (!instances_file.empty()) {
                shared = read_instances(instances_file);
            }
            const auto mappings = discover_mappings(local, global, shared ? &*shared : nullptr, threshold);
            if (!mapping_out.empty()) {
                write_text_file(mapping_out, serialize_mappings(mappings));
            }
            Rows t{{"local", "global", "confidence", "method"}, {}};
            for (const auto& m : mappings) {
                t.rows.push_back(
                    {m.local_uri, m.global_uri, format_decimal(m.confidence), std::string(to_string(m.method))});
            }
            p.print(t);
        };
    });
    std::string sim_a;
    std::string sim_b;
    std::string counts_file;
    auto* o_sim = ontology->add_subcommand("sim", "Resnik similarity of two concepts");
    o_sim->add_option("a", sim_a, "First concept uri")->required();
    o_sim->add_option("b", sim_b, "Second concept uri")->required();
    o_sim->add_option("--counts", counts_file, "JSON object: uri -> annotation count (default: store counts)")
        ->check(CLI::ExistingFile);
    o_sim->callback([&] {
        action = [&](Printer& p) {
            const auto o = require_ontology(cfg);
            AnnotationCounts counts;
            if (!counts_file.empty()) {
                counts = read_counts(counts_file);
            } else {
                require_data_dir(cfg);
                for (const auto& [uri, n] : load_store(cfg, &o)->stats().concept_counts) {
                    counts[uri] = n;
                }
            }
            const double s = o.resnik_similarity(sim_a, sim_b, counts);
            p.print(Rows{{"a", "b", "similarity"}, {{sim_a, sim_b, format_decimal(s)}}});
        };
    });

    // data
    auto* data = app.add_subcommand("data", "Ingest and view patient data");
    data->require_subcommand(1);
    std::string csv_file;
    std::string csv_mapping;
    auto* d_csv = data->add_subcommand("ingest-csv", "Ingest a CSV export");
    d_csv->add_option("file", csv_file, "CSV file")->required()->check(CLI::ExistingFile);
    d_csv->add_option("--mapping", csv_mapping, "Column mapping JSON")->required()->check(CLI::ExistingFile);
    d_csv->callback([&] {
        action = [&](Printer& p) {
            const auto mapping = IngestMapping::parse(read_text_file(csv_mapping));
            const auto onto = load_ontology(cfg);
            auto store = load_store(cfg, onto ? &*onto : nullptr);
            const auto counts = store->ingest_csv(read_text_file(csv_file), mapping);
            save_store(cfg, *store);
            p.print(Rows{{"rows_ok", "rows_rejected"},
                         {{std::to_string(counts.rows_ok), std::to_string(counts.rows_rejected)}}});
            if (!counts.rejected.empty()) {
                Rows t{{"line", "reason"}, {}};
                for (const auto& r : counts.rejected) {
                    t.rows.push_back({std::to_string(r.line), r.reason});
                }
                p.print(t);
            }
        };
    });
    std::string dicom_met;
    std::string dicom_cvt;
    std::string dicom_series_cvt;
    std::vector<std::string> dicom_files;
    auto* d_dicom = data->add_subcommand("ingest-dicom", "Ingest DICOM metadata sidecars, one event per series");
    d_dicom->add_option("--event-type", dicom_met, "Medical event type")->required();
    d_dicom->add_option("--cvt", dicom_cvt, "DICOMData variable type")->required();
    d_dicom->add_option("--series-cvt", dicom_series_cvt, "DICOMSeries variable type");
    d_dicom->add_option("files", dicom_files, "Sidecar files")->required()->check(CLI::ExistingFile);
    d_dicom->callback([&] {
        action = [&](Printer& p) {
            const auto onto = load_ontology(cfg);
            auto store = load_store(cfg, onto ? &*onto : nullptr);
            std::map<std::pair<std::string, std::string>, SidecarGroup> groups;
            for (const auto& file : dicom_files) {
                auto sidecar = parse_dicom_sidecar(read_text_file(file));
                auto tag = [&](DicomTag t) -> std::string {
                    const auto* v = sidecar.find(t);
                    if (!v || v->empty()) {
                        throw Error(Errc::MalformedTag, file + ": missing tag " + t.to_string());
                    }
                    return *v;
                };
                const auto pseudonym = tag(dicom_tags::patient_id);
                const auto date_text = tag(dicom_tags::study_date);
                const auto date = Date::parse_compact(date_text);
                if (!date) {
                    throw Error(Errc::MalformedTag, file + ": bad study date '" + date_text + "'");
                }
                auto& g = groups[{tag(dicom_tags::study_instance_uid), tag(dicom_tags::series_instance_uid)}];
                if (g.instances.empty()) {
                    g.pseudonym = pseudonym;
                    g.study_date = *date;
                } else if (g.pseudonym != pseudonym) {
                    throw Error(Errc::InvalidSeries, file + ": series mixes patients");
                }
                g.instances.emplace_back(file, std::move(sidecar));
            }
            Rows t{{"event_id", "pseudonym", "instances"}, {}};
            for (const auto& [uids, g] : groups) {
                const auto patient = store->patient(g.pseudonym);
                if (!patient) {
                    throw Error(Errc::UnknownPatient, "no patient '" + g.pseudonym + "'");
                }
                const auto visit_id = g.pseudonym + "@" + g.study_date.to_string();
                Visit visit = store->visit(visit_id).value_or(
                    Visit{visit_id, g.pseudonym, VisitPurpose{VisitPurposeKind::Other, "imaging"}, g.study_date, {}});
                MedicalEvent ev;
                ev.event_id = dicom_met + ":" + uids.second;
                ev.event_type = dicom_met;
                ev.visit = visit_id;
                ev.time = Instant{g.study_date};
                ev.kind = EventKind{EventKindTag::Examination, {}};
                ev.variables = dicom_variables(ev.event_id, g, dicom_cvt, dicom_series_cvt, uids.first, uids.second);
                t.rows.push_back({ev.event_id, g.pseudonym, std::to_string(g.instances.size())});
                store->record_event(*patient, visit, std::move(ev));
            }
            save_store(cfg, *store);
            p.print(t);
        };
    });
    std::string view_pseudonym;
    std::vector<std::string> view_levels;
    auto* d_view = data->add_subcommand("view", "Longitudinal view of one patient");
    d_view->add_option("pseudonym", view_pseudonym, "Patient pseudonym")->required();
    d_view->add_option("--levels", view_levels, "Vertical levels, comma separated")->delimiter(',');
    d_view->callback([&] {
        action = [&](Printer& p) {
            std::set<VerticalLevel> levels;
            for (const auto& l : view_levels) {
                const auto level = parse_vertical_level(l);
                if (!level) {
                    throw UsageError("unknown vertical level '" + l + "'");
                }
                levels.insert(*level);
            }
            if (levels.empty()) {
                for (int i = 0; i <= static_cast<int>(VerticalLevel::Population); ++i) {
                    levels.insert(static_cast<VerticalLevel>(i));
                }
            }
            require_data_dir(cfg);
            auto store = load_store(cfg, nullptr);
            if (!store->patient(view_pseudonym)) {
                throw Error(Errc::UnknownPatient, "no patient '" + view_pseudonym + "'");
            }
            const auto view = store->longitudinal_view(view_pseudonym, levels);
            Rows t{{"level", "event_id", "event_type", "start", "end", "values"}, {}};
            for (const auto& [level, entries] : view.by_level) {
                for (const auto& e : entries) {
                    auto [start, end] = time_cells(e.time);
                    t.rows.push_back({std::string(to_string(level)), e.event.event_id, e.event.event_type, start,
                                      end, values_cell(e.event.variables)});
                }
            }
            p.print(t);
        };
    });

    // query
    auto* query = app.add_subcommand("query", "Run queries on the local node");
    query->require_subcommand(1);
    std::string query_text;
    bool no_enhance = false;
    bool explain = false;
    bool with_associated = false;
    auto* q_run = query->add_subcommand("run", "Run a query");
    q_run->add_option("query", query_text, "Query text")->required();
    q_run->add_flag("--no-enhance", no_enhance, "Skip ontology enhancement");
    q_run->add_flag("--explain", explain, "Print the enhanced query and the plan");
    q_run->add_flag("--with-associated", with_associated, "Also expand along associated_with");
    q_run->callback([&] {
        action = [&](Printer& p) {
            auto ast = parse_query(query_text);
            require_data_dir(cfg);
            const auto onto = load_ontology(cfg);
            auto store = load_store(cfg, onto ? &*onto : nullptr);
            ast = bind(std::move(ast), store->registry());
            if (!no_enhance && onto) {
                auto preds = default_expansion_predicates;
                if (with_associated) {
                    preds.insert(Predicate::associated_with);
                }
                ast = enhance(std::move(ast), *onto, preds);
            }
            const auto view = store->read();
            const auto plan = optimize(ast, view.stats(), view.registry());
            if (explain) {
                p.note("enhanced", to_string(ast));
                p.note("plan", describe(plan));
            }
            p.print(result_rows(execute(plan, view).rows));
        };
    });

    // federation
    auto* fed = app.add_subcommand("fed", "Federated queries");
    fed->require_subcommand(1);
    std::vector<std::string> fail_nodes;
    std::vector<std::string> slow_nodes;
    std::string fed_text;
    bool fed_no_enhance = false;
    auto apply_faults = [&](Gateway& g) {
        for (const auto& n : fail_nodes) {
            g.inject_fault(n, Fault{FaultKind::Unreachable, {}});
        }
        for (const auto& s : slow_nodes) {
            auto [node, delay] = parse_slow(s);
            g.inject_fault(node, Fault{FaultKind::SlowBy, delay});
        }
    };
    auto* f_demo = fed->add_subcommand("demo", "Three seeded nodes answering the Jaw query");
    auto* f_query = fed->add_subcommand("query", "Run a query over the configured federation");
    for (auto* sub : {f_demo, f_query}) {
        sub->add_option("--fail", fail_nodes, "Mark a node unreachable (repeatable)");
        sub->add_option("--slow", slow_nodes, "Delay a node, <node>:<ms> (repeatable)");
        sub->add_flag("--no-enhance", fed_no_enhance, "Skip ontology enhancement");
    }
    f_demo->add_option("query", fed_text, "Query text (default: the Jaw query)");
    f_query->add_option("query", fed_text, "Query text")->required();
    f_demo->callback([&] {
        action = [&](Printer& p) {
            auto ast = parse_query(fed_text.empty() ? std::string(demo_query) : fed_text);
            auto g = demo_gateway();
            apply_faults(*g);
            print_federated(p, g->execute(ast, !fed_no_enhance));
        };
    });
    f_query->callback([&] {
        action = [&](Printer& p) {
            if (cfg.federation_file.empty()) {
                throw UsageError("fed query needs --federation <config>");
            }
            auto ast = parse_query(fed_text);
            auto g = Gateway::load_config(cfg.federation_file);
            apply_faults(*g);
            print_federated(p, g->execute(ast, !fed_no_enhance));
        };
    });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << deepest_parsed(&app)->help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << deepest_parsed(&app)->help();
        return exit_usage_error;
    }

    Printer printer(cfg.format == "jsonl" ? Format::JsonLines : Format::Table, out);
    try {
        if (!action) {
            throw UsageError("no command given");
        }
        action(printer);
        return exit_ok;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return exit_usage_error;
    } catch (const Error& e) {
        err << "error: " << errc_name(e.code()) << ": " << e.what() << "\n";
        return e.code() == Errc::SyntaxError ? exit_usage_error : exit_domain_error;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << errc_name(Errc::IoError) << ": " << e.what() << "\n";
        return exit_domain_error;
    }
}

} // namespace hec
