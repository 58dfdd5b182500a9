#pragma once

#include "dermgen/prompt.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dermgen {

enum class ImageSource { synthetic, real };

const char* source_name(ImageSource s);

/// Full provenance for one image in a dataset. Synthetic records carry the
/// prompt, seed, tone, and backend that produced them; real records carry
/// none of those.
struct ImageRecord {
    std::string relative_path;
    std::string condition_label;
    ImageSource source = ImageSource::synthetic;
    std::string prompt_rendered;         // empty for real
    std::optional<uint64_t> seed;        // absent for real
    std::optional<SkinTone> skin_tone;   // absent when unknown (all real samples)
    std::optional<std::string> location; // body site, when known
    std::string backend_id;              // empty for real
    std::string checksum;                // sha256 hex of the stored bytes

    bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
    std::vector<ImageRecord> records;
    std::vector<std::string> class_labels;
    std::string created_with;
    std::string root_hint;
    bool complete = true;

    /// Directory that relative_path entries resolve against. Runtime state,
    /// not serialized; set by whoever produced or loaded the manifest.
    std::string resolved_root;

    std::string resolve(const ImageRecord& r) const;
};

/// Enforce every manifest invariant (field consistency per source, unique
/// paths, labels covered by class_labels). Throws Error on violation.
void validate_manifest(const DatasetManifest& m);

/// Line-delimited JSON: one header line, then one record per line sorted by
/// (condition_label, relative_path).
void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

/// Records sorted by the canonical manifest order.
void sort_records(std::vector<ImageRecord>& records);

std::map<std::string, int> per_class_counts(const DatasetManifest& m);
std::map<std::string, std::map<FitzpatrickGrade, int>> per_class_tone_counts(const DatasetManifest& m);

/// Stable digest over class labels and record contents (not root paths);
/// used as a cache key and for provenance reporting.
std::string manifest_checksum(const DatasetManifest& m);

} // namespace dermgen
