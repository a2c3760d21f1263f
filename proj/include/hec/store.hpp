/**
 * @file store.hpp
 * @brief Validated record store for a single node (hospital).
 *
 * Holds patients, visits and medical events. Every variable is validated
 * against the registry before it is stored, and insertion is all-or-nothing
 * per event. Persistence is one line-delimited JSON file per collection plus
 * the registry document.
 *
 * Concurrency: single writer, many readers. Readers obtain a ReadView, which
 * pins a committed state for its lifetime.
 */

#ifndef HEC_STORE_HPP
#define HEC_STORE_HPP

#include "hec/core.hpp"
#include "hec/error.hpp"
#include "hec/registry.hpp"

#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hec {

/// Thrown by NodeStore::record_event when a variable does not validate.
class ValidationError : public Error {
public:
    explicit ValidationError(ValidationReport report)
        : Error(Errc::ValidationFailed, report.summary()), report_(std::move(report)) {}

    const ValidationReport& report() const noexcept { return report_; }

private:
    ValidationReport report_;
};

struct CvtStats {
    std::size_t rows = 0;      // variables stored with this CVT
    std::size_t distinct = 0;  // distinct canonical values among them
};

/// Count/distinct statistics maintained on every write; no histograms.
struct StoreStats {
    std::size_t events = 0;
    std::map<std::string, CvtStats, std::less<>> cvts;
    std::map<std::string, std::size_t, std::less<>> event_types;
    std::map<std::string, std::size_t, std::less<>> concept_counts;  // concept instance occurrences
};

struct TimelineEntry {
    MedicalEvent event;
    std::optional<ResolvedInterval> time;
};

struct Timeline {
    std::map<VerticalLevel, std::vector<TimelineEntry>> by_level;

    std::size_t size() const noexcept;
};

// =============================================================================
// CSV ingestion
// =============================================================================

struct ColumnMapping {
    std::string column;
    std::string cvt_id;
    std::optional<std::string> unit;  // measurement unit when cells hold bare numbers
};

struct IngestMapping {
    std::vector<ColumnMapping> columns;
    std::string patient_key_column;
    std::string visit_date_column;
    std::string event_type;
    std::optional<std::string> birth_date_column;
    std::optional<std::string> sex_column;
    std::optional<std::string> event_id_column;
    VisitPurpose visit_purpose{VisitPurposeKind::Other, "import"};

    static IngestMapping parse(std::string_view json_text);
};

struct RejectedRow {
    std::size_t line = 0;
    std::string reason;
};

struct IngestCounts {
    std::size_t rows_ok = 0;
    std::size_t rows_rejected = 0;
    std::map<std::string, std::size_t> violations;  // keyed by violation or error code
    std::vector<RejectedRow> rejected;
};

/// RFC-4180 reader: header row first, double-quote escaping, CRLF or LF.
/// Throws Error(MalformedCSV) naming the offending line.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> row_lines;  // 1-based source line of each row
};

CsvTable parse_csv(std::string_view text);

// =============================================================================
// DICOM metadata sidecars
// =============================================================================

/// Parses `GGGGEEEE=value` lines (`#` comments, blank lines ignored).
/// Throws Error(MalformedTag) naming the offending line.
DicomData parse_dicom_sidecar(std::string_view text);

/// Orders the DICOMData entries of one (study, series) by instance number.
/// Throws Error(EmptySeries) when none match.
DicomSeries assemble_series(std::span<const std::pair<std::string, DicomData>> instances,
                            std::string_view study_id, std::string_view series_id);

// =============================================================================
// NodeStore
// =============================================================================

class NodeStore {
    struct Data;

public:
    explicit NodeStore(std::string node_id, Registry registry = {});
    ~NodeStore();

    NodeStore(const NodeStore&) = delete;
    NodeStore& operator=(const NodeStore&) = delete;

    const std::string& node_id() const noexcept { return node_id_; }

    /// The registry is internally synchronized and may be evolved in place.
    Registry& registry() noexcept { return registry_; }
    const Registry& registry() const noexcept { return registry_; }

    /// Resolver used for MedicalConceptInstance validation.
    void set_concept_resolver(ConceptResolver resolver);

    /// Adds a patient; re-adding an identical record is a no-op, a different
    /// record under the same pseudonym is DuplicateId.
    void add_patient(const PatientRecord& patient);

    /// Errors: UnknownPatient, InvalidVisitDate (before birth), DuplicateId.
    void add_visit(const Visit& visit);

    /**
     * Stores one event under an existing visit. Variables without an id get
     * `<event_id>#<index>`. Errors: DuplicateId, UnknownVisit,
     * RelativeTimeCycle, InvalidSeries, DanglingReference, and
     * ValidationError carrying the full report.
     */
    std::string record_event(MedicalEvent event);

    /// Creates the patient and visit when absent, atomically with the event.
    std::string record_event(const PatientRecord& patient, const Visit& visit, MedicalEvent event);

    /// Row-atomic CSV ingestion: bad rows are rejected and counted, good rows kept.
    IngestCounts ingest_csv(std::string_view csv_text, const IngestMapping& mapping);

    /// Groups the stored DICOMData variables of one series.
    DicomSeries assemble_series(std::string_view study_id, std::string_view series_id) const;

    /// Events of `pseudonym` whose MET level is in `levels`, each level sorted
    /// by resolved start (unresolvable last, then insertion order).
    Timeline longitudinal_view(std::string_view pseudonym, const std::set<VerticalLevel>& levels) const;

    /// Re-checks every stored variable against the current registry.
    ValidationReport revalidate() const;

    StoreStats stats() const;

    std::optional<PatientRecord> patient(std::string_view pseudonym) const;
    std::optional<Visit> visit(std::string_view visit_id) const;
    std::optional<MedicalEvent> event(std::string_view event_id) const;
    std::vector<PatientRecord> patients() const;
    std::vector<Visit> visits() const;
    std::vector<MedicalEvent> events() const;

    /// Pins a consistent committed state for reading.
    class ReadView {
    public:
        const std::string& node_id() const noexcept;
        const Registry& registry() const noexcept;
        StoreStats stats() const;

        /// Events in identifier order.
        std::vector<const MedicalEvent*> events() const;
        const MedicalEvent* event(std::string_view event_id) const;
        const PatientRecord* patient_of(const MedicalEvent& event) const;
        std::optional<ResolvedInterval> resolved_time(const MedicalEvent& event) const;

    private:
        friend class NodeStore;
        ReadView(const NodeStore& store);

        std::shared_lock<std::shared_mutex> lock_;
        const NodeStore* store_;
    };

    ReadView read() const { return ReadView(*this); }

    std::string serialize_patients() const;
    std::string serialize_visits() const;
    std::string serialize_events() const;

    /// Writes registry.json, patients.jsonl, visits.jsonl, events.jsonl.
    void save(const std::filesystem::path& dir) const;

    /// Loads a saved directory verbatim (no re-validation; see revalidate()).
    static std::unique_ptr<NodeStore> load(const std::filesystem::path& dir, std::string node_id);

    /// Builds a store from serialized collections, as save() writes them.
    static std::unique_ptr<NodeStore> from_serialized(std::string node_id, Registry registry,
                                                      std::string_view patients_jsonl,
                                                      std::string_view visits_jsonl,
                                                      std::string_view events_jsonl);

private:
    std::string record_locked(MedicalEvent event);
    void check_visit_locked(const Visit& visit) const;

    std::string node_id_;
    Registry registry_;
    ConceptResolver concepts_;
    std::unique_ptr<Data> data_;
    mutable std::shared_mutex mutex_;
};

} // namespace hec

#endif // HEC_STORE_HPP
