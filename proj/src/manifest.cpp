#include "dermgen/manifest.hpp"

#include "dermgen/error.hpp"
#include "dermgen/hashing.hpp"
#include "dermgen/version.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace dermgen {

namespace fs = std::filesystem;
using nlohmann::json;

const char* source_name(ImageSource s) { return s == ImageSource::synthetic ? "synthetic" : "real"; }

std::string DatasetManifest::resolve(const ImageRecord& r) const {
    if (resolved_root.empty()) return r.relative_path;
    return (fs::path(resolved_root) / r.relative_path).string();
}

void sort_records(std::vector<ImageRecord>& records) {
    std::sort(records.begin(), records.end(), [](const ImageRecord& a, const ImageRecord& b) {
        if (a.condition_label != b.condition_label) return a.condition_label < b.condition_label;
        return a.relative_path < b.relative_path;
    });
}

void validate_manifest(const DatasetManifest& m) {
    std::set<std::string> labels(m.class_labels.begin(), m.class_labels.end());
    require(labels.size() == m.class_labels.size(), Errc::duplicate_label,
            "manifest class_labels contains duplicates");
    for (const std::string& label : m.class_labels)
        require(is_valid_label(label), Errc::malformed_file,
                "manifest class label '" + label + "' must match [a-z0-9_]+");

    std::set<std::string> paths;
    for (const ImageRecord& r : m.records) {
        require(!r.relative_path.empty(), Errc::malformed_file, "record with empty relative_path");
        require(paths.insert(r.relative_path).second, Errc::malformed_file,
                "duplicate relative_path in manifest: " + r.relative_path);
        require(labels.count(r.condition_label) != 0, Errc::label_mismatch,
                "record label '" + r.condition_label + "' not in class_labels (" + r.relative_path + ")");
        require(!r.checksum.empty(), Errc::malformed_file, "record missing checksum: " + r.relative_path);
        if (r.source == ImageSource::synthetic) {
            require(!r.prompt_rendered.empty(), Errc::malformed_file,
                    "synthetic record missing prompt: " + r.relative_path);
            require(r.seed.has_value(), Errc::malformed_file,
                    "synthetic record missing seed: " + r.relative_path);
            require(!r.backend_id.empty(), Errc::malformed_file,
                    "synthetic record missing backend_id: " + r.relative_path);
        } else {
            require(r.prompt_rendered.empty() && !r.seed.has_value() && r.backend_id.empty() &&
                        !r.skin_tone.has_value(),
                    Errc::malformed_file,
                    "real record carries synthetic provenance fields: " + r.relative_path);
        }
    }
}

namespace {

json record_to_json(const ImageRecord& r) {
    json j;
    j["relative_path"] = r.relative_path;
    j["condition_label"] = r.condition_label;
    j["source"] = source_name(r.source);
    if (r.source == ImageSource::synthetic) {
        j["prompt_rendered"] = r.prompt_rendered;
        j["seed"] = *r.seed;
        j["backend_id"] = r.backend_id;
    }
    if (r.skin_tone) {
        j["skin_tone"] = {{"grade", grade_name(r.skin_tone->grade)},
                          {"descriptor", r.skin_tone->descriptor}};
    }
    if (r.location) j["location"] = *r.location;
    j["checksum"] = r.checksum;
    return j;
}

ImageRecord record_from_json(const json& j, const std::string& where) {
    ImageRecord r;
    try {
        r.relative_path = j.at("relative_path").get<std::string>();
        r.condition_label = j.at("condition_label").get<std::string>();
        std::string source = j.at("source").get<std::string>();
        if (source == "synthetic")
            r.source = ImageSource::synthetic;
        else if (source == "real")
            r.source = ImageSource::real;
        else
            raise(Errc::malformed_file, where + ": unknown source '" + source + "'");
        if (j.contains("prompt_rendered")) r.prompt_rendered = j.at("prompt_rendered").get<std::string>();
        if (j.contains("seed")) r.seed = j.at("seed").get<uint64_t>();
        if (j.contains("backend_id")) r.backend_id = j.at("backend_id").get<std::string>();
        if (j.contains("skin_tone")) {
            const json& t = j.at("skin_tone");
            auto grade = parse_grade(t.at("grade").get<std::string>());
            if (!grade) raise(Errc::malformed_file, where + ": unknown skin tone grade");
            r.skin_tone = SkinTone{*grade, t.at("descriptor").get<std::string>()};
        }
        if (j.contains("location")) r.location = j.at("location").get<std::string>();
        r.checksum = j.at("checksum").get<std::string>();
    } catch (const json::exception& e) {
        raise(Errc::malformed_file, where + ": " + e.what());
    }
    return r;
}

} // namespace

void save_manifest(const DatasetManifest& m, const std::string& path) {
    validate_manifest(m);
    DatasetManifest sorted = m;
    sort_records(sorted.records);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::io_error, "cannot write manifest: " + path);

    json header;
    header["class_labels"] = sorted.class_labels;
    header["created_with"] = sorted.created_with.empty() ? kToolId : sorted.created_with;
    header["root_hint"] = sorted.root_hint;
    header["complete"] = sorted.complete;
    out << header.dump() << "\n";
    for (const ImageRecord& r : sorted.records) out << record_to_json(r).dump() << "\n";
    if (!out) raise(Errc::io_error, "write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(Errc::io_error, "cannot open manifest: " + path);

    DatasetManifest m;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::ostringstream where;
        where << path << ":" << line_no;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            raise(Errc::malformed_file, where.str() + ": " + e.what());
        }
        if (line_no == 1) {
            try {
                m.class_labels = j.at("class_labels").get<std::vector<std::string>>();
                m.created_with = j.value("created_with", "");
                m.root_hint = j.value("root_hint", "");
                m.complete = j.value("complete", true);
            } catch (const json::exception& e) {
                raise(Errc::malformed_file, where.str() + ": bad manifest header: " + e.what());
            }
        } else {
            m.records.push_back(record_from_json(j, where.str()));
        }
    }
    if (line_no == 0) raise(Errc::malformed_file, path + ": empty manifest file");
    // Records usually live next to the manifest; a manifest saved elsewhere
    // (e.g. a split written into a results directory) still resolves through
    // its root_hint when that is where the files actually are.
    m.resolved_root = fs::path(path).parent_path().string();
    if (!m.records.empty() && !fs::exists(m.resolve(m.records.front())) && !m.root_hint.empty()) {
        DatasetManifest probe = m;
        probe.resolved_root = m.root_hint;
        if (fs::exists(probe.resolve(m.records.front()))) m.resolved_root = m.root_hint;
    }
    validate_manifest(m);
    return m;
}

std::map<std::string, int> per_class_counts(const DatasetManifest& m) {
    std::map<std::string, int> counts;
    for (const std::string& label : m.class_labels) counts[label] = 0;
    for (const ImageRecord& r : m.records) counts[r.condition_label]++;
    return counts;
}

std::map<std::string, std::map<FitzpatrickGrade, int>> per_class_tone_counts(const DatasetManifest& m) {
    std::map<std::string, std::map<FitzpatrickGrade, int>> counts;
    for (const ImageRecord& r : m.records)
        if (r.skin_tone) counts[r.condition_label][r.skin_tone->grade]++;
    return counts;
}

std::string manifest_checksum(const DatasetManifest& m) {
    DatasetManifest sorted = m;
    sort_records(sorted.records);
    std::ostringstream ss;
    ss << json(sorted.class_labels).dump() << "\n";
    for (const ImageRecord& r : sorted.records) ss << record_to_json(r).dump() << "\n";
    return sha256_hex(ss.str());
}

} // namespace dermgen
