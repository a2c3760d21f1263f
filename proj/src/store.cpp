#include "hec/store.hpp"

#include "io_util.hpp"
#include "json_codec.hpp"

#include <algorithm>
#include <charconv>
#include <mutex>

namespace hec {

using json = nlohmann::json;

std::size_t Timeline::size() const noexcept {
    std::size_t n = 0;
    for (const auto& [level, entries] : by_level) {
        n += entries.size();
    }
    return n;
}

struct NodeStore::Data {
    std::map<std::string, PatientRecord, std::less<>> patients;
    std::map<std::string, Visit, std::less<>> visits;
    std::map<std::string, MedicalEvent, std::less<>> events;
    std::vector<std::string> insertion_order;
    std::map<std::string, std::size_t, std::less<>> seq;
    std::map<std::string, std::string, std::less<>> variable_owner;  // variable id -> event id

    std::map<std::string, std::map<std::string, std::size_t>, std::less<>> cvt_values;
    std::map<std::string, std::size_t, std::less<>> met_counts;
    std::map<std::string, std::size_t, std::less<>> concept_counts;

    const MedicalEvent* find_event(std::string_view id) const {
        auto it = events.find(id);
        return it == events.end() ? nullptr : &it->second;
    }

    const ClinicalVariable* find_variable(std::string_view id) const {
        auto owner = variable_owner.find(id);
        if (owner == variable_owner.end()) {
            return nullptr;
        }
        const auto& event = events.at(owner->second);
        for (const auto& v : event.variables) {
            if (v.id == id) {
                return &v;
            }
        }
        return nullptr;
    }

    void commit(MedicalEvent event) {
        for (const auto& v : event.variables) {
            variable_owner.emplace(v.id, event.event_id);
            ++cvt_values[v.cvt_id][value_text(v.payload)];
            if (const auto* c = std::get_if<MedicalConceptInstance>(&v.payload)) {
                ++concept_counts[c->concept_uri];
            }
        }
        ++met_counts[event.event_type];
        if (auto visit = visits.find(event.visit); visit != visits.end()) {
            auto& list = visit->second.events;
            if (std::find(list.begin(), list.end(), event.event_id) == list.end()) {
                list.push_back(event.event_id);
            }
        }
        seq.emplace(event.event_id, insertion_order.size());
        insertion_order.push_back(event.event_id);
        const auto id = event.event_id;
        events.emplace(id, std::move(event));
    }
};

NodeStore::NodeStore(std::string node_id, Registry registry)
    : node_id_(std::move(node_id)), registry_(std::move(registry)), data_(std::make_unique<Data>()) {}

NodeStore::~NodeStore() = default;

void NodeStore::set_concept_resolver(ConceptResolver resolver) {
    std::unique_lock lock(mutex_);
    concepts_ = std::move(resolver);
}

void NodeStore::add_patient(const PatientRecord& patient) {
    if (patient.pseudonym.empty()) {
        throw Error(Errc::InvalidValue, "patient pseudonym must be non-empty");
    }
    std::unique_lock lock(mutex_);
    auto it = data_->patients.find(patient.pseudonym);
    if (it != data_->patients.end()) {
        if (it->second == patient) {
            return;
        }
        throw Error(Errc::DuplicateId, "patient '" + patient.pseudonym + "' already exists");
    }
    data_->patients.emplace(patient.pseudonym, patient);
}

void NodeStore::check_visit_locked(const Visit& visit) const {
    if (visit.visit_id.empty()) {
        throw Error(Errc::InvalidValue, "visit id must be non-empty");
    }
    auto patient = data_->patients.find(visit.patient);
    if (patient == data_->patients.end()) {
        throw Error(Errc::UnknownPatient, "no patient '" + visit.patient + "'");
    }
    if (visit.date < patient->second.birth_date) {
        throw Error(Errc::InvalidVisitDate, "visit '" + visit.visit_id + "' on " + visit.date.to_string() +
                                                " precedes the birth date of '" + visit.patient + "'");
    }
    for (const auto& id : visit.events) {
        const auto* e = data_->find_event(id);
        if (e == nullptr || e->visit != visit.visit_id) {
            throw Error(Errc::DanglingReference,
                        "visit '" + visit.visit_id + "' lists event '" + id + "' that does not cite it");
        }
    }
}

void NodeStore::add_visit(const Visit& visit) {
    std::unique_lock lock(mutex_);
    if (auto it = data_->visits.find(visit.visit_id); it != data_->visits.end()) {
        throw Error(Errc::DuplicateId, "visit '" + visit.visit_id + "' already exists");
    }
    check_visit_locked(visit);
    data_->visits.emplace(visit.visit_id, visit);
}

std::string NodeStore::record_locked(MedicalEvent event) {
    auto& data = *data_;
    if (event.event_id.empty()) {
        throw Error(Errc::InvalidValue, "event id must be non-empty");
    }
    if (data.events.contains(event.event_id)) {
        throw Error(Errc::DuplicateId, "event '" + event.event_id + "' already exists");
    }
    if (!data.visits.contains(event.visit)) {
        throw Error(Errc::UnknownVisit, "no visit '" + event.visit + "'");
    }

    std::set<std::string> local_ids;
    for (std::size_t i = 0; i < event.variables.size(); ++i) {
        auto& v = event.variables[i];
        if (v.id.empty()) {
            v.id = event.event_id + "#" + std::to_string(i);
        }
        if (data.variable_owner.contains(v.id) || !local_ids.insert(v.id).second) {
            throw Error(Errc::DuplicateId, "variable id '" + v.id + "' already in use");
        }
    }

    const EventLookup lookup = [&data, &event](std::string_view id) -> const MedicalEvent* {
        return id == event.event_id ? &event : data.find_event(id);
    };
    (void)resolve_time(event, lookup);

    ValidationReport report;
    if (event.variables.empty() && !registry_.has_met(event.event_type)) {
        report.violations.push_back(
            {ViolationCode::EventTypeMismatch, "unknown event type '" + event.event_type + "'"});
    }
    for (const auto& v : event.variables) {
        auto r = registry_.validate_variable(v, event.event_type, concepts_);
        for (auto& violation : r.violations) {
            violation.detail = v.id + ": " + violation.detail;
            report.violations.push_back(std::move(violation));
        }
    }
    if (!report.valid()) {
        throw ValidationError(std::move(report));
    }

    auto find_local = [&event, &data](std::string_view id) -> const ClinicalVariable* {
        for (const auto& v : event.variables) {
            if (v.id == id) {
                return &v;
            }
        }
        return data.find_variable(id);
    };
    for (const auto& v : event.variables) {
        if (const auto* a = std::get_if<Annotation>(&v.payload); a && a->attached_to) {
            if (find_local(*a->attached_to) == nullptr) {
                throw Error(Errc::DanglingReference,
                            "annotation '" + v.id + "' is attached to unknown variable '" + *a->attached_to + "'");
            }
        }
        if (const auto* s = std::get_if<DicomSeries>(&v.payload)) {
            if (s->members.empty()) {
                throw Error(Errc::InvalidSeries, "series '" + v.id + "' has no members");
            }
            for (const auto& member : s->members) {
                const auto* m = find_local(member);
                const auto* d = m ? std::get_if<DicomData>(&m->payload) : nullptr;
                if (d == nullptr) {
                    throw Error(Errc::InvalidSeries, "series member '" + member + "' is not a DICOMData variable");
                }
                const auto* study = d->find(dicom_tags::study_instance_uid);
                const auto* series = d->find(dicom_tags::series_instance_uid);
                if (!study || !series || *study != s->study_id || *series != s->series_id) {
                    throw Error(Errc::InvalidSeries,
                                "series member '" + member + "' belongs to a different study or series");
                }
            }
        }
    }

    const auto id = event.event_id;
    data.commit(std::move(event));
    return id;
}

std::string NodeStore::record_event(MedicalEvent event) {
    std::unique_lock lock(mutex_);
    return record_locked(std::move(event));
}

std::string NodeStore::record_event(const PatientRecord& patient, const Visit& visit, MedicalEvent event) {
    if (patient.pseudonym.empty()) {
        throw Error(Errc::InvalidValue, "patient pseudonym must be non-empty");
    }
    if (visit.patient != patient.pseudonym) {
        throw Error(Errc::DanglingReference, "visit '" + visit.visit_id + "' belongs to another patient");
    }
    std::unique_lock lock(mutex_);
    auto& data = *data_;
    bool added_patient = false;
    bool added_visit = false;
    try {
        if (!data.patients.contains(patient.pseudonym)) {
            data.patients.emplace(patient.pseudonym, patient);
            added_patient = true;
        }
        if (auto it = data.visits.find(visit.visit_id); it == data.visits.end()) {
            Visit fresh = visit;
            fresh.events.clear();
            check_visit_locked(fresh);
            data.visits.emplace(fresh.visit_id, fresh);
            added_visit = true;
        } else if (it->second.patient != visit.patient) {
            throw Error(Errc::DuplicateId, "visit '" + visit.visit_id + "' belongs to another patient");
        }
        event.visit = visit.visit_id;
        return record_locked(std::move(event));
    } catch (...) {
        if (added_visit) {
            data.visits.erase(visit.visit_id);
        }
        if (added_patient) {
            data.patients.erase(patient.pseudonym);
        }
        throw;
    }
}

// =============================================================================
// Reads
// =============================================================================

StoreStats NodeStore::stats() const {
    return read().stats();
}

std::optional<PatientRecord> NodeStore::patient(std::string_view pseudonym) const {
    std::shared_lock lock(mutex_);
    auto it = data_->patients.find(pseudonym);
    return it == data_->patients.end() ? std::nullopt : std::optional(it->second);
}

std::optional<Visit> NodeStore::visit(std::string_view visit_id) const {
    std::shared_lock lock(mutex_);
    auto it = data_->visits.find(visit_id);
    return it == data_->visits.end() ? std::nullopt : std::optional(it->second);
}

std::optional<MedicalEvent> NodeStore::event(std::string_view event_id) const {
    std::shared_lock lock(mutex_);
    const auto* e = data_->find_event(event_id);
    return e ? std::optional(*e) : std::nullopt;
}

std::vector<PatientRecord> NodeStore::patients() const {
    std::shared_lock lock(mutex_);
    std::vector<PatientRecord> out;
    for (const auto& [id, p] : data_->patients) {
        out.push_back(p);
    }
    return out;
}

std::vector<Visit> NodeStore::visits() const {
    std::shared_lock lock(mutex_);
    std::vector<Visit> out;
    for (const auto& [id, v] : data_->visits) {
        out.push_back(v);
    }
    return out;
}

std::vector<MedicalEvent> NodeStore::events() const {
    std::shared_lock lock(mutex_);
    std::vector<MedicalEvent> out;
    for (const auto& [id, e] : data_->events) {
        out.push_back(e);
    }
    return out;
}

NodeStore::ReadView::ReadView(const NodeStore& store) : lock_(store.mutex_), store_(&store) {}

const std::string& NodeStore::ReadView::node_id() const noexcept {
    return store_->node_id_;
}

const Registry& NodeStore::ReadView::registry() const noexcept {
    return store_->registry_;
}

StoreStats NodeStore::ReadView::stats() const {
    const auto& data = *store_->data_;
    StoreStats s;
    s.events = data.events.size();
    for (const auto& [cvt, values] : data.cvt_values) {
        CvtStats c;
        c.distinct = values.size();
        for (const auto& [value, count] : values) {
            c.rows += count;
        }
        s.cvts.emplace(cvt, c);
    }
    for (const auto& [met, count] : data.met_counts) {
        s.event_types.emplace(met, count);
    }
    for (const auto& [uri, count] : data.concept_counts) {
        s.concept_counts.emplace(uri, count);
    }
    return s;
}

std::vector<const MedicalEvent*> NodeStore::ReadView::events() const {
    std::vector<const MedicalEvent*> out;
    out.reserve(store_->data_->events.size());
    for (const auto& [id, e] : store_->data_->events) {
        out.push_back(&e);
    }
    return out;
}

const MedicalEvent* NodeStore::ReadView::event(std::string_view event_id) const {
    return store_->data_->find_event(event_id);
}

const PatientRecord* NodeStore::ReadView::patient_of(const MedicalEvent& event) const {
    const auto& data = *store_->data_;
    auto visit = data.visits.find(event.visit);
    if (visit == data.visits.end()) {
        return nullptr;
    }
    auto patient = data.patients.find(visit->second.patient);
    return patient == data.patients.end() ? nullptr : &patient->second;
}

std::optional<ResolvedInterval> NodeStore::ReadView::resolved_time(const MedicalEvent& event) const {
    const auto& data = *store_->data_;
    try {
        return resolve_time(event, [&data](std::string_view id) { return data.find_event(id); });
    } catch (const Error&) {
        return std::nullopt;
    }
}

Timeline NodeStore::longitudinal_view(std::string_view pseudonym, const std::set<VerticalLevel>& levels) const {
    auto view = read();
    const auto& data = *data_;
    if (!data.patients.contains(pseudonym)) {
        throw Error(Errc::UnknownPatient, "no patient '" + std::string(pseudonym) + "'");
    }
    struct Keyed {
        TimelineEntry entry;
        std::size_t seq;
    };
    std::map<VerticalLevel, std::vector<Keyed>> grouped;
    for (const auto& [id, event] : data.events) {
        const auto* patient = view.patient_of(event);
        if (patient == nullptr || patient->pseudonym != pseudonym) {
            continue;
        }
        auto met = registry_.find_met(event.event_type);
        if (!met || !levels.contains(met->vertical_level)) {
            continue;
        }
        grouped[met->vertical_level].push_back({{event, view.resolved_time(event)}, data.seq.at(id)});
    }
    Timeline timeline;
    for (auto& [level, entries] : grouped) {
        std::stable_sort(entries.begin(), entries.end(), [](const Keyed& a, const Keyed& b) {
            const bool ra = a.entry.time.has_value();
            const bool rb = b.entry.time.has_value();
            if (ra != rb) {
                return ra;  // unresolvable last
            }
            if (ra && a.entry.time->start != b.entry.time->start) {
                return a.entry.time->start < b.entry.time->start;  // unbounded start first
            }
            return a.seq < b.seq;
        });
        auto& out = timeline.by_level[level];
        for (auto& k : entries) {
            out.push_back(std::move(k.entry));
        }
    }
    return timeline;
}

ValidationReport NodeStore::revalidate() const {
    std::shared_lock lock(mutex_);
    ValidationReport report;
    for (const auto& id : data_->insertion_order) {
        const auto& event = data_->events.at(id);
        for (const auto& v : event.variables) {
            auto r = registry_.validate_variable(v, event.event_type, concepts_);
            for (auto& violation : r.violations) {
                violation.detail = event.event_id + "/" + v.id + ": " + violation.detail;
                report.violations.push_back(std::move(violation));
            }
        }
    }
    return report;
}

// =============================================================================
// DICOM
// =============================================================================

DicomData parse_dicom_sidecar(std::string_view text) {
    DicomData data;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string_view::npos || line[first] == '#') {
            if (end == text.size()) {
                break;
            }
            continue;
        }
        const auto eq = line.find('=');
        auto key = eq == std::string_view::npos ? line : line.substr(0, eq);
        while (!key.empty() && (key.front() == ' ' || key.front() == '\t')) {
            key.remove_prefix(1);
        }
        while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) {
            key.remove_suffix(1);
        }
        auto tag = DicomTag::parse(key);
        if (eq == std::string_view::npos || !tag) {
            throw Error(Errc::MalformedTag, "line " + std::to_string(line_no) + ": expected GGGGEEEE=value");
        }
        if (data.find(*tag) != nullptr) {
            throw Error(Errc::MalformedTag, "line " + std::to_string(line_no) + ": duplicate tag " + tag->to_string());
        }
        data.tags.emplace_back(*tag, std::string(line.substr(eq + 1)));
        if (end == text.size()) {
            break;
        }
    }
    return data;
}

DicomSeries assemble_series(std::span<const std::pair<std::string, DicomData>> instances,
                            std::string_view study_id, std::string_view series_id) {
    struct Member {
        std::optional<long long> number;
        std::string id;
    };
    std::vector<Member> members;
    for (const auto& [id, data] : instances) {
        const auto* study = data.find(dicom_tags::study_instance_uid);
        const auto* series = data.find(dicom_tags::series_instance_uid);
        if (!study || !series || *study != study_id || *series != series_id) {
            continue;
        }
        Member m{std::nullopt, id};
        if (const auto* n = data.find(dicom_tags::instance_number)) {
            long long value = 0;
            auto [ptr, ec] = std::from_chars(n->data(), n->data() + n->size(), value);
            if (ec == std::errc{} && ptr == n->data() + n->size()) {
                m.number = value;
            }
        }
        members.push_back(std::move(m));
    }
    if (members.empty()) {
        throw Error(Errc::EmptySeries,
                    "no instances for study '" + std::string(study_id) + "' series '" + std::string(series_id) + "'");
    }
    std::sort(members.begin(), members.end(), [](const Member& a, const Member& b) {
        if (a.number.has_value() != b.number.has_value()) {
            return a.number.has_value();
        }
        if (a.number != b.number) {
            return *a.number < *b.number;
        }
        return a.id < b.id;
    });
    DicomSeries series{{}, std::string(study_id), std::string(series_id)};
    for (auto& m : members) {
        series.members.push_back(std::move(m.id));
    }
    return series;
}

DicomSeries NodeStore::assemble_series(std::string_view study_id, std::string_view series_id) const {
    std::vector<std::pair<std::string, DicomData>> instances;
    {
        std::shared_lock lock(mutex_);
        for (const auto& [id, event] : data_->events) {
            for (const auto& v : event.variables) {
                if (const auto* d = std::get_if<DicomData>(&v.payload)) {
                    instances.emplace_back(v.id, *d);
                }
            }
        }
    }
    return hec::assemble_series(instances, study_id, series_id);
}

// =============================================================================
// CSV
// =============================================================================

CsvTable parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::size_t> record_lines;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    bool was_quoted = false;
    std::size_t line = 1;
    std::size_t record_line = 1;

    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
        was_quoted = false;
    };
    auto end_record = [&] {
        end_field();
        const bool blank = record.size() == 1 && record[0].empty();
        if (!blank) {
            records.push_back(std::move(record));
            record_lines.push_back(record_line);
        }
        record.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') {
                    ++line;
                }
                field += c;
            }
            continue;
        }
        switch (c) {
        case '"':
            if (field_started || was_quoted) {
                throw Error(Errc::MalformedCSV, "line " + std::to_string(line) + ": stray quote inside field");
            }
            in_quotes = true;
            was_quoted = true;
            break;
        case ',':
            end_field();
            break;
        case '\r':
            if (i + 1 < text.size() && text[i + 1] == '\n') {
                break;
            }
            [[fallthrough]];
        case '\n':
            end_record();
            ++line;
            record_line = line;
            break;
        default:
            if (was_quoted) {
                throw Error(Errc::MalformedCSV,
                            "line " + std::to_string(line) + ": characters after closing quote");
            }
            field += c;
            field_started = true;
        }
    }
    if (in_quotes) {
        throw Error(Errc::MalformedCSV, "line " + std::to_string(record_line) + ": unterminated quoted field");
    }
    if (field_started || was_quoted || !record.empty()) {
        end_record();
    }

    CsvTable table;
    if (records.empty()) {
        throw Error(Errc::MalformedCSV, "line 1: missing header row");
    }
    table.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != table.header.size()) {
            throw Error(Errc::MalformedCSV, "line " + std::to_string(record_lines[r]) + ": expected " +
                                                std::to_string(table.header.size()) + " fields, got " +
                                                std::to_string(records[r].size()));
        }
        table.rows.push_back(std::move(records[r]));
        table.row_lines.push_back(record_lines[r]);
    }
    return table;
}

IngestMapping IngestMapping::parse(std::string_view json_text) {
    try {
        const auto j = json::parse(json_text);
        IngestMapping m;
        m.patient_key_column = j.at("patient_key_column").get<std::string>();
        m.visit_date_column = j.at("visit_date_column").get<std::string>();
        m.event_type = j.at("event_type").get<std::string>();
        auto opt = [&j](const char* key) -> std::optional<std::string> {
            if (!j.contains(key) || j.at(key).is_null()) {
                return std::nullopt;
            }
            return j.at(key).get<std::string>();
        };
        m.birth_date_column = opt("birth_date_column");
        m.sex_column = opt("sex_column");
        m.event_id_column = opt("event_id_column");
        if (auto purpose = opt("visit_purpose")) {
            auto parsed = parse_visit_purpose(*purpose);
            if (!parsed) {
                throw Error(Errc::MappingError, "unknown visit purpose '" + *purpose + "'");
            }
            m.visit_purpose = *parsed;
        }
        for (const auto& c : j.at("columns")) {
            ColumnMapping col{c.at("column").get<std::string>(), c.at("cvt_id").get<std::string>(), std::nullopt};
            if (c.contains("unit")) {
                col.unit = c.at("unit").get<std::string>();
            }
            m.columns.push_back(std::move(col));
        }
        return m;
    } catch (const json::exception& e) {
        throw Error(Errc::MappingError, std::string("ingest mapping: ") + e.what());
    }
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    return s;
}

struct RowRejected {
    std::string code;
    std::string reason;
};

} // namespace

IngestCounts NodeStore::ingest_csv(std::string_view csv_text, const IngestMapping& mapping) {
    const auto table = parse_csv(csv_text);

    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (!index.emplace(table.header[i], i).second) {
            throw Error(Errc::MappingError, "duplicate CSV column '" + table.header[i] + "'");
        }
    }
    auto column = [&index](const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) {
            throw Error(Errc::MappingError, "CSV has no column '" + name + "'");
        }
        return it->second;
    };
    const auto patient_col = column(mapping.patient_key_column);
    const auto date_col = column(mapping.visit_date_column);
    std::optional<std::size_t> birth_col;
    std::optional<std::size_t> sex_col;
    std::optional<std::size_t> event_col;
    if (mapping.birth_date_column) {
        birth_col = column(*mapping.birth_date_column);
    }
    if (mapping.sex_column) {
        sex_col = column(*mapping.sex_column);
    }
    if (mapping.event_id_column) {
        event_col = column(*mapping.event_id_column);
    }
    if (!registry_.has_met(mapping.event_type)) {
        throw Error(Errc::MappingError, "unknown event type '" + mapping.event_type + "'");
    }
    struct BoundColumn {
        std::size_t index;
        ClinicalVariableType cvt;
        std::optional<std::string> unit;
    };
    std::vector<BoundColumn> bound;
    for (const auto& c : mapping.columns) {
        auto cvt = registry_.find_cvt(c.cvt_id);
        if (!cvt) {
            throw Error(Errc::MappingError, "column '" + c.column + "' maps to unknown CVT '" + c.cvt_id + "'");
        }
        if (cvt->category == VariableCategory::DICOMData || cvt->category == VariableCategory::DICOMSeries) {
            throw Error(Errc::MappingError, "column '" + c.column + "': DICOM variables cannot come from CSV");
        }
        if (c.column == mapping.patient_key_column) {
            throw Error(Errc::MappingError, "the patient key column cannot also carry a variable");
        }
        bound.push_back({column(c.column), *cvt, c.unit ? c.unit : cvt->unit});
    }

    IngestCounts counts;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.row_lines[r];
        auto reject = [&counts, line](const std::string& code, const std::string& reason) {
            ++counts.rows_rejected;
            ++counts.violations[code];
            counts.rejected.push_back({line, reason});
        };
        try {
            const std::string pseudonym(trim(row[patient_col]));
            if (pseudonym.empty()) {
                throw RowRejected{"InvalidValue", "empty patient key"};
            }
            auto date = Date::parse(trim(row[date_col]));
            if (!date) {
                throw RowRejected{"InvalidValue", "bad visit date '" + row[date_col] + "'"};
            }

            PatientRecord patient;
            if (auto existing = this->patient(pseudonym)) {
                patient = *existing;
            } else {
                auto birth = birth_col ? Date::parse(trim(row[*birth_col])) : std::nullopt;
                if (!birth) {
                    throw RowRejected{"UnknownPatient", "patient '" + pseudonym + "' unknown and no birth date given"};
                }
                patient.pseudonym = pseudonym;
                patient.birth_date = *birth;
                if (sex_col) {
                    patient.sex = parse_sex(trim(row[*sex_col])).value_or(Sex::Unknown);
                }
            }
            Visit visit{pseudonym + "@" + date->to_string(), pseudonym, mapping.visit_purpose, *date, {}};

            MedicalEvent event;
            event.event_id = event_col ? std::string(trim(row[*event_col]))
                                       : mapping.event_type + ":" + pseudonym + ":" + date->to_string() + ":L" +
                                             std::to_string(line);
            event.event_type = mapping.event_type;
            event.visit = visit.visit_id;
            event.time = Instant{*date};
            event.kind = EventKind{EventKindTag::Examination, {}};
            for (const auto& b : bound) {
                const std::string_view cell = trim(row[b.index]);
                if (cell.empty()) {
                    continue;
                }
                ClinicalVariable v;
                v.cvt_id = b.cvt.id;
                switch (b.cvt.category) {
                case VariableCategory::Measurement: {
                    auto space = cell.find(' ');
                    auto number = Decimal::parse(cell.substr(0, space));
                    std::string unit = space == std::string_view::npos ? b.unit.value_or("")
                                                                       : std::string(trim(cell.substr(space + 1)));
                    if (!number || unit.empty()) {
                        throw RowRejected{"InvalidValue", "bad measurement '" + std::string(cell) + "'"};
                    }
                    v.payload = Measurement(*number, unit);
                    break;
                }
                case VariableCategory::Annotation:
                    v.payload = Annotation{std::string(cell), std::nullopt};
                    break;
                case VariableCategory::ObservationByClassification:
                    v.payload = ObservationByClassification{std::string(cell)};
                    break;
                case VariableCategory::ExternalResource:
                    v.payload = ExternalResource{std::string(cell)};
                    break;
                case VariableCategory::MedicalConceptInstance:
                    v.payload = MedicalConceptInstance{std::string(cell)};
                    break;
                default:
                    break;
                }
                event.variables.push_back(std::move(v));
            }
            record_event(patient, visit, std::move(event));
            ++counts.rows_ok;
        } catch (const RowRejected& e) {
            reject(e.code, e.reason);
        } catch (const ValidationError& e) {
            ++counts.rows_rejected;
            for (const auto& v : e.report().violations) {
                ++counts.violations[std::string(to_string(v.code))];
            }
            counts.rejected.push_back({line, e.what()});
        } catch (const Error& e) {
            reject(std::string(errc_name(e.code())), e.what());
        }
    }
    return counts;
}

// =============================================================================
// Persistence
// =============================================================================

std::string NodeStore::serialize_patients() const {
    std::shared_lock lock(mutex_);
    std::string out;
    for (const auto& [id, p] : data_->patients) {
        out += codec::to_json(p).dump() + "\n";
    }
    return out;
}

std::string NodeStore::serialize_visits() const {
    std::shared_lock lock(mutex_);
    std::string out;
    for (const auto& [id, v] : data_->visits) {
        out += codec::to_json(v).dump() + "\n";
    }
    return out;
}

std::string NodeStore::serialize_events() const {
    std::shared_lock lock(mutex_);
    std::string out;
    for (const auto& id : data_->insertion_order) {
        out += codec::to_json(data_->events.at(id)).dump() + "\n";
    }
    return out;
}

void NodeStore::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    registry_.save(dir / "registry.json");
    write_text_file(dir / "patients.jsonl", serialize_patients());
    write_text_file(dir / "visits.jsonl", serialize_visits());
    write_text_file(dir / "events.jsonl", serialize_events());
}

namespace {

template <typename F>
void for_each_line(std::string_view text, const char* what, F&& f) {
    std::size_t pos = 0;
    std::size_t line = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        ++line;
        const auto record = text.substr(pos, end - pos);
        pos = end + 1;
        if (trim(record).empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(record);
        } catch (const json::exception& e) {
            throw Error(Errc::MalformedRecord,
                        std::string(what) + " line " + std::to_string(line) + ": " + e.what());
        }
        f(j);
    }
}

std::string read_if_exists(const std::filesystem::path& path) {
    return std::filesystem::exists(path) ? read_text_file(path) : std::string{};
}

} // namespace

std::unique_ptr<NodeStore> NodeStore::from_serialized(std::string node_id, Registry registry,
                                                      std::string_view patients_jsonl,
                                                      std::string_view visits_jsonl,
                                                      std::string_view events_jsonl) {
    auto store = std::make_unique<NodeStore>(std::move(node_id), std::move(registry));
    auto& data = *store->data_;
    for_each_line(patients_jsonl, "patients", [&data](const json& j) {
        auto p = codec::patient_from_json(j);
        const auto id = p.pseudonym;
        data.patients.emplace(id, std::move(p));
    });
    for_each_line(visits_jsonl, "visits", [&data](const json& j) {
        auto v = codec::visit_from_json(j);
        if (!data.patients.contains(v.patient)) {
            throw Error(Errc::MalformedRecord, "visit '" + v.visit_id + "' references unknown patient");
        }
        const auto id = v.visit_id;
        data.visits.emplace(id, std::move(v));
    });
    for_each_line(events_jsonl, "events", [&data](const json& j) {
        auto e = codec::event_from_json(j);
        if (!data.visits.contains(e.visit)) {
            throw Error(Errc::MalformedRecord, "event '" + e.event_id + "' references unknown visit");
        }
        if (data.events.contains(e.event_id)) {
            throw Error(Errc::MalformedRecord, "duplicate event '" + e.event_id + "'");
        }
        data.commit(std::move(e));
    });
    return store;
}

std::unique_ptr<NodeStore> NodeStore::load(const std::filesystem::path& dir, std::string node_id) {
    const auto registry_path = dir / "registry.json";
    Registry registry = std::filesystem::exists(registry_path) ? Registry::load(registry_path) : Registry{};
    return from_serialized(std::move(node_id), std::move(registry), read_if_exists(dir / "patients.jsonl"),
                           read_if_exists(dir / "visits.jsonl"), read_if_exists(dir / "events.jsonl"));
}

} // namespace hec
