#pragma once

#include "dermgen/backend.hpp"
#include "dermgen/manifest.hpp"
#include "dermgen/prompt.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dermgen {

struct BuildOptions {
    int width = 256;
    int height = 256;
    int item_retries = 3;         // attempts per derived seed
    int seed_advance_rounds = 3;  // fresh derived seeds per item after retries run out
    int global_retry_budget = 64; // total retryable failures tolerated per build
    std::string manifest_filename = "manifest.jsonl";
    std::map<std::string, std::string> backend_params;
};

/// Generate `per_class` images per condition under out_dir/<label>/ and
/// write a provenance manifest. Tone balance within a class is inherited
/// from enumerate_instantiations. Per-item generation seeds derive from
/// (seed, label, item index), so any single item can be regenerated in
/// isolation. A retryable backend failure is retried, then the item's seed
/// advances; if the global retry budget runs out the partial manifest is
/// saved flagged incomplete and BackendUnavailable propagates.
DatasetManifest build_synthetic_dataset(const std::vector<ConditionSpec>& specs,
                                        int per_class,
                                        GenerationBackend& backend,
                                        const std::string& out_dir,
                                        uint64_t seed,
                                        const BuildOptions& options = {});

} // namespace dermgen
