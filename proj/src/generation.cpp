#include "dermgen/generation.hpp"

#include "dermgen/error.hpp"
#include "dermgen/hashing.hpp"
#include "dermgen/image.hpp"
#include "dermgen/log.hpp"
#include "dermgen/rng.hpp"
#include "dermgen/version.hpp"

#include <cstdio>
#include <filesystem>
#include <set>

namespace dermgen {

namespace fs = std::filesystem;

namespace {

bool is_png(const std::vector<unsigned char>& bytes) {
    static const unsigned char magic[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8) return false;
    for (int i = 0; i < 8; ++i)
        if (bytes[i] != magic[i]) return false;
    return true;
}

std::string item_filename(const std::string& label, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%04d.png", index);
    return label + "/" + label + buf;
}

} // namespace

DatasetManifest build_synthetic_dataset(const std::vector<ConditionSpec>& specs,
                                        int per_class,
                                        GenerationBackend& backend,
                                        const std::string& out_dir,
                                        uint64_t seed,
                                        const BuildOptions& options) {
    require(!specs.empty(), Errc::invalid_argument, "no condition specs given");
    require(per_class >= 1, Errc::invalid_argument, "per_class must be >= 1");
    {
        std::set<std::string> labels;
        for (const ConditionSpec& s : specs)
            require(labels.insert(s.label).second, Errc::duplicate_label,
                    "duplicate condition label '" + s.label + "'");
    }

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) raise(Errc::io_error, "cannot create output directory " + out_dir + ": " + ec.message());

    DatasetManifest manifest;
    manifest.created_with = kToolId;
    manifest.root_hint = out_dir;
    manifest.resolved_root = out_dir;
    for (const ConditionSpec& s : specs) manifest.class_labels.push_back(s.label);

    const std::string manifest_path = (fs::path(out_dir) / options.manifest_filename).string();
    auto save_partial_and_rethrow = [&]() {
        manifest.complete = false;
        sort_records(manifest.records);
        save_manifest(manifest, manifest_path);
        log_error("generation aborted; partial manifest with " +
                  std::to_string(manifest.records.size()) + " records saved to " + manifest_path);
        throw;
    };

    int global_failures = 0;
    for (const ConditionSpec& spec : specs) {
        fs::create_directories(fs::path(out_dir) / spec.label, ec);
        if (ec) raise(Errc::io_error, "cannot create class directory for " + spec.label);

        std::vector<PromptInstantiation> instantiations =
            enumerate_instantiations(spec, per_class, seed);

        for (int index = 0; index < per_class; ++index) {
            const PromptInstantiation& inst = instantiations[static_cast<size_t>(index)];
            const uint64_t base_item_seed =
                derive_seed(seed, "item", fnv1a64(spec.label), static_cast<uint64_t>(index));

            GenerationRequest request;
            request.instantiation = inst;
            request.width = options.width;
            request.height = options.height;
            request.backend_params = options.backend_params;

            std::vector<unsigned char> bytes;
            bool produced = false;
            try {
                for (int round = 0; round < options.seed_advance_rounds && !produced; ++round) {
                    request.seed = round == 0
                                       ? base_item_seed
                                       : derive_seed(base_item_seed, "retry", static_cast<uint64_t>(round));
                    for (int attempt = 0; attempt < options.item_retries && !produced; ++attempt) {
                        try {
                            bytes = backend_generate(backend, request);
                            produced = true;
                        } catch (const Error& e) {
                            if (e.code() != Errc::backend_unavailable) throw;
                            ++global_failures;
                            if (global_failures > options.global_retry_budget)
                                raise(Errc::backend_unavailable,
                                      "global retry budget (" +
                                          std::to_string(options.global_retry_budget) +
                                          ") exhausted at " + spec.label + " item " +
                                          std::to_string(index) + ": " + e.what());
                            log_warn(std::string("retryable backend failure: ") + e.what());
                        }
                    }
                }
                if (!produced)
                    raise(Errc::backend_unavailable,
                          "item " + spec.label + "#" + std::to_string(index) + " failed after " +
                              std::to_string(options.seed_advance_rounds) + " seed rounds x " +
                              std::to_string(options.item_retries) + " attempts");
            } catch (const Error&) {
                save_partial_and_rethrow();
            }

            // Synthetic images are stored losslessly so checksums are
            // reproducible; transcode anything the backend did not already
            // deliver as PNG.
            if (!is_png(bytes)) bytes = encode_png(decode_image(bytes));

            ImageRecord record;
            record.relative_path = item_filename(spec.label, index);
            record.condition_label = spec.label;
            record.source = ImageSource::synthetic;
            record.prompt_rendered = inst.rendered;
            record.seed = request.seed;
            record.skin_tone = inst.slots.skin_tone;
            record.location = inst.slots.physical_location;
            record.backend_id = backend.id();
            record.checksum = sha256_hex(bytes);

            try {
                write_file_bytes((fs::path(out_dir) / record.relative_path).string(), bytes);
            } catch (const Error&) {
                save_partial_and_rethrow();
            }
            manifest.records.push_back(std::move(record));
        }
    }

    sort_records(manifest.records);
    manifest.complete = true;
    save_manifest(manifest, manifest_path);
    return manifest;
}

} // namespace dermgen
