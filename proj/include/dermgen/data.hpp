#pragma once

#include "dermgen/manifest.hpp"
#include "dermgen/nn/tensor.hpp"

#include <array>
#include <cstdint>
#include <opencv2/core.hpp>
#include <optional>
#include <string>
#include <utility>

namespace dermgen {

/// A class-per-folder image corpus: <root>/<class_label>/*.{jpg,jpeg,png}.
struct RealDatasetSource {
    std::string root;
    bool skip_unreadable = false;
};

struct SplitSpec {
    double finetune_fraction = 0.10;
    uint64_t seed = 0;
    bool stratified = true;
    int min_per_class = 1;
};

struct MaskRegion {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;
};

enum class LogoRemoval { none, mask_inpaint };

struct PreprocessConfig {
    int target_width = 224;
    int target_height = 224;
    // ImageNet channel statistics, the convention of the pretrained backbones.
    std::array<float, 3> channel_means = {0.485f, 0.456f, 0.406f};
    std::array<float, 3> channel_stds = {0.229f, 0.224f, 0.225f};
    LogoRemoval logo_removal = LogoRemoval::none;
    std::optional<MaskRegion> logo_mask;
};

/// Walk a class-per-folder tree into a manifest of real records, sorted by
/// (label, filename), with content checksums. Throws EmptyClass for an
/// empty class folder; an undecodable file is fatal unless skip_unreadable
/// is set, in which case it is skipped with a warning.
DatasetManifest ingest_real(const RealDatasetSource& source);

/// Replace the pixels inside config.logo_mask with a deterministic
/// diffusion fill interpolated from the mask boundary; all other pixels
/// pass through bit-exactly. A no-op when logo_removal is none.
cv::Mat remove_logo(const cv::Mat& rgb, const PreprocessConfig& config);

/// Split a manifest into disjoint (finetune, eval) parts covering it
/// exactly. Stratified mode draws per class: max(min_per_class,
/// floor(fraction * class_size)) items. Deterministic in the seed.
std::pair<DatasetManifest, DatasetManifest> split_real(const DatasetManifest& manifest,
                                                       const SplitSpec& spec);

/// Decode -> logo removal -> bilinear resize -> scale to [0,1] -> per-channel
/// standardization. Returns a (3, H, W) float tensor in RGB channel order.
nn::Tensor preprocess(const cv::Mat& rgb, const PreprocessConfig& config);
nn::Tensor preprocess_file(const std::string& path, const PreprocessConfig& config);

} // namespace dermgen
