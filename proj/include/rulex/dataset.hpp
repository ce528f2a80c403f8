#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "json.hpp"
#include "rulex/stimulus.hpp"

namespace rulex {

// Line-delimited JSON, one sequence per line:
//   {"regime": "partial", "spec": {...} | null,
//    "context": [{"class": [s1, s2], "label": l, "stimulus": [...]}, ...],
//    "query_class": [s1, s2], "query": [...], "target": t}
nlohmann::json to_json(const SequenceExample& ex);
SequenceExample sequence_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PartialExposureSpec& spec);
PartialExposureSpec spec_from_json(const nlohmann::json& j);

void write_jsonl(const std::filesystem::path& path, const std::vector<SequenceExample>& examples);
std::vector<SequenceExample> read_jsonl(const std::filesystem::path& path);

// Binary form. All integers are little-endian uint32, floats little-endian
// float32 (the checkpoint payload convention).
//   header:  "RXSQ", version (1), record count, stimulus length
//   record:  regime, has_spec, [a b x w extra.slot1 extra.slot2
//            label_a label_b label_extra control], context length,
//            per item: slot1 slot2 label stimulus[len],
//            query slot1 slot2, query[len], target
void write_binary(const std::filesystem::path& path, const std::vector<SequenceExample>& examples);
std::vector<SequenceExample> read_binary(const std::filesystem::path& path);

}  // namespace rulex
