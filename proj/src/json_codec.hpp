#ifndef HEC_SRC_JSON_CODEC_HPP
#define HEC_SRC_JSON_CODEC_HPP

#include "hec/core.hpp"

#include <json.hpp>

namespace hec::codec {

using json = nlohmann::json;

json to_json(const PatientRecord& patient);
json to_json(const Visit& visit);
json to_json(const MedicalEvent& event);
json to_json(const ClinicalVariable& variable);
json to_json(const TimeRef& time);

// All throw Error(MalformedRecord) on shape errors.
PatientRecord patient_from_json(const json& j);
Visit visit_from_json(const json& j);
MedicalEvent event_from_json(const json& j);
ClinicalVariable variable_from_json(const json& j);
TimeRef time_from_json(const json& j);

} // namespace hec::codec

#endif // HEC_SRC_JSON_CODEC_HPP
