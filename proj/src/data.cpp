#include "dermgen/data.hpp"

#include "dermgen/error.hpp"
#include "dermgen/hashing.hpp"
#include "dermgen/image.hpp"
#include "dermgen/log.hpp"
#include "dermgen/rng.hpp"
#include "dermgen/version.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <map>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace dermgen {

namespace {

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

} // namespace

DatasetManifest ingest_real(const RealDatasetSource& source) {
    require(!source.root.empty(), Errc::invalid_argument, "ingest: dataset root path is empty");
    fs::path root(source.root);
    require(fs::exists(root) && fs::is_directory(root), Errc::io_error,
            "ingest: dataset root is not a directory: " + source.root);

    std::vector<std::string> labels;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        labels.push_back(entry.path().filename().string());
    }
    std::sort(labels.begin(), labels.end());
    require(!labels.empty(), Errc::empty_class, "ingest: no class folders under " + source.root);

    DatasetManifest m;
    m.class_labels = labels;
    m.created_with = kToolId;
    m.root_hint = source.root;
    m.resolved_root = source.root;

    for (const auto& label : labels) {
        require(is_valid_label(label), Errc::malformed_file,
                "ingest: class folder name '" + label + "' must match [a-z0-9_]+");
        fs::path class_dir = root / label;

        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(class_dir)) {
            if (!entry.is_regular_file() || !has_image_extension(entry.path())) continue;
            files.push_back(entry.path().filename().string());
        }
        std::sort(files.begin(), files.end());
        require(!files.empty(), Errc::empty_class, "ingest: class folder has no images: " + class_dir.string());

        for (const auto& name : files) {
            fs::path file = class_dir / name;
            // Decode now so a corrupt file fails at ingest time, not mid-training.
            try {
                load_image(file.string());
            } catch (const Error& e) {
                if (e.code() == Errc::unreadable_image && source.skip_unreadable) {
                    log_warn("skipping unreadable image " + file.string());
                    continue;
                }
                throw;
            }
            ImageRecord r;
            r.relative_path = label + "/" + name;
            r.condition_label = label;
            r.source = ImageSource::real;
            r.checksum = sha256_file(file.string());
            m.records.push_back(std::move(r));
        }
        bool any = std::any_of(m.records.begin(), m.records.end(),
                               [&](const ImageRecord& r) { return r.condition_label == label; });
        require(any, Errc::empty_class, "ingest: every image unreadable in " + class_dir.string());
    }

    sort_records(m.records);
    validate_manifest(m);
    return m;
}

cv::Mat remove_logo(const cv::Mat& rgb, const PreprocessConfig& config) {
    require(rgb.type() == CV_8UC3, Errc::invalid_argument, "remove_logo: expected an 8-bit 3-channel image");
    if (config.logo_removal == LogoRemoval::none) return rgb.clone();

    require(config.logo_mask.has_value(), Errc::invalid_config,
            "remove_logo: mask_inpaint requires a mask region");
    const MaskRegion& mask = *config.logo_mask;
    require(mask.width > 0 && mask.height > 0, Errc::mask_out_of_bounds,
            "remove_logo: mask region has non-positive size");
    require(mask.x >= 0 && mask.y >= 0 && mask.x + mask.width <= rgb.cols &&
                mask.y + mask.height <= rgb.rows,
            Errc::mask_out_of_bounds, "remove_logo: mask region exceeds image bounds");

    cv::Mat out = rgb.clone();

    // Diffusion fill: solve Laplace's equation over the mask interior with the
    // surrounding pixels as Dirichlet boundary, by Jacobi iteration in double
    // precision. Initialized to the boundary mean, so a constant boundary is a
    // fixed point and a uniform image round-trips bit-exactly. Where the mask
    // touches the image edge there is no outside pixel to borrow; those sides
    // are insulated (no-flux) so the logo itself never leaks into the fill.
    int x0 = mask.x, y0 = mask.y, w = mask.width, h = mask.height;
    auto in_mask = [&](int y, int x) { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; };

    for (int c = 0; c < 3; ++c) {
        // boundary mean over the ring just outside the mask, skipping ring
        // positions that fall off the image
        double boundary_sum = 0.0;
        int boundary_n = 0;
        auto ring = [&](int y, int x) {
            if (y < 0 || y >= rgb.rows || x < 0 || x >= rgb.cols) return;
            boundary_sum += static_cast<double>(rgb.at<cv::Vec3b>(y, x)[c]);
            ++boundary_n;
        };
        for (int x = x0 - 1; x <= x0 + w; ++x) {
            ring(y0 - 1, x);
            ring(y0 + h, x);
        }
        for (int y = y0; y < y0 + h; ++y) {
            ring(y, x0 - 1);
            ring(y, x0 + w);
        }
        // a mask covering the whole image leaves no boundary; fill mid-gray
        double init = boundary_n > 0 ? boundary_sum / boundary_n : 128.0;

        std::vector<double> grid(static_cast<size_t>(w) * h, init);
        std::vector<double> next(grid.size());
        auto boundary_or_grid = [&](const std::vector<double>& g, int y, int x) -> double {
            // off-image neighbors reflect back into the mask: insulated edge
            int yc = std::clamp(y, 0, rgb.rows - 1);
            int xc = std::clamp(x, 0, rgb.cols - 1);
            if (in_mask(yc, xc)) return g[static_cast<size_t>(yc - y0) * w + (xc - x0)];
            return static_cast<double>(rgb.at<cv::Vec3b>(yc, xc)[c]);
        };

        const int max_iters = 4 * (w + h) * (w + h); // generous for diffusion mixing time
        for (int it = 0; it < max_iters; ++it) {
            double max_delta = 0.0;
            for (int y = y0; y < y0 + h; ++y) {
                for (int x = x0; x < x0 + w; ++x) {
                    double v = 0.25 * (boundary_or_grid(grid, y - 1, x) + boundary_or_grid(grid, y + 1, x) +
                                       boundary_or_grid(grid, y, x - 1) + boundary_or_grid(grid, y, x + 1));
                    size_t i = static_cast<size_t>(y - y0) * w + (x - x0);
                    max_delta = std::max(max_delta, std::abs(v - grid[i]));
                    next[i] = v;
                }
            }
            grid.swap(next);
            if (max_delta < 1e-4) break;
        }

        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) {
                double v = grid[static_cast<size_t>(y - y0) * w + (x - x0)];
                out.at<cv::Vec3b>(y, x)[c] =
                    static_cast<unsigned char>(std::clamp(std::lround(v), 0l, 255l));
            }
    }
    return out;
}

std::pair<DatasetManifest, DatasetManifest> split_real(const DatasetManifest& manifest,
                                                       const SplitSpec& spec) {
    require(spec.finetune_fraction > 0.0 && spec.finetune_fraction < 1.0, Errc::invalid_config,
            "split: finetune_fraction must be in (0,1)");
    require(spec.min_per_class >= 1, Errc::invalid_config, "split: min_per_class must be >= 1");
    validate_manifest(manifest);
    require(!manifest.records.empty(), Errc::invalid_argument, "split: manifest has no records");

    std::map<std::string, std::vector<const ImageRecord*>> by_class;
    for (const auto& r : manifest.records) by_class[r.condition_label].push_back(&r);

    auto make_child = [&] {
        DatasetManifest child;
        child.class_labels = manifest.class_labels;
        child.created_with = kToolId;
        child.root_hint = manifest.root_hint; // records still live under the parent's root
        child.resolved_root = manifest.resolved_root;
        return child;
    };
    DatasetManifest finetune = make_child();
    DatasetManifest eval = make_child();

    if (spec.stratified) {
        for (auto& [label, items] : by_class) {
            int n = static_cast<int>(items.size());
            int needed = static_cast<int>(std::ceil(spec.min_per_class / spec.finetune_fraction));
            require(n >= needed, Errc::insufficient_class_size,
                    "split: class '" + label + "' has " + std::to_string(n) + " items; needs at least " +
                        std::to_string(needed) + " for a stratified split at fraction " +
                        std::to_string(spec.finetune_fraction));

            int take = std::max(spec.min_per_class,
                                static_cast<int>(std::floor(spec.finetune_fraction * n)));
            Rng rng(derive_seed(spec.seed, "split", fnv1a64(label)));
            rng.shuffle(items);
            for (int i = 0; i < n; ++i)
                (i < take ? finetune : eval).records.push_back(*items[i]);
        }
    } else {
        std::vector<const ImageRecord*> all;
        for (auto& [label, items] : by_class)
            all.insert(all.end(), items.begin(), items.end());
        int take = std::max(spec.min_per_class,
                            static_cast<int>(std::floor(spec.finetune_fraction * all.size())));
        Rng rng(derive_seed(spec.seed, "split"));
        rng.shuffle(all);
        for (size_t i = 0; i < all.size(); ++i)
            (static_cast<int>(i) < take ? finetune : eval).records.push_back(*all[i]);
        // Unstratified draws can still starve a class; the min-per-class
        // invariant holds either way, so check it after the fact.
        auto counts = per_class_counts(finetune);
        for (const auto& label : manifest.class_labels) {
            auto it = counts.find(label);
            int got = it == counts.end() ? 0 : it->second;
            require(got >= spec.min_per_class, Errc::insufficient_class_size,
                    "split: unstratified draw left class '" + label + "' with " + std::to_string(got) +
                        " finetune items (< " + std::to_string(spec.min_per_class) +
                        "); use a stratified split or another seed");
        }
    }

    sort_records(finetune.records);
    sort_records(eval.records);
    return {std::move(finetune), std::move(eval)};
}

nn::Tensor preprocess(const cv::Mat& rgb, const PreprocessConfig& config) {
    require(rgb.type() == CV_8UC3 && !rgb.empty(), Errc::decode_error,
            "preprocess: expected a non-empty 8-bit 3-channel image");
    require(config.target_width > 0 && config.target_height > 0, Errc::invalid_config,
            "preprocess: target dimensions must be positive");
    for (float s : config.channel_stds)
        require(s > 0.0f, Errc::invalid_config, "preprocess: channel stds must be strictly positive");

    cv::Mat cleaned = config.logo_removal == LogoRemoval::none ? rgb : remove_logo(rgb, config);
    cv::Mat resized;
    cv::resize(cleaned, resized, cv::Size(config.target_width, config.target_height), 0, 0,
               cv::INTER_LINEAR);

    nn::Tensor out({3, config.target_height, config.target_width});
    const int hw = config.target_height * config.target_width;
    for (int y = 0; y < resized.rows; ++y) {
        const cv::Vec3b* row = resized.ptr<cv::Vec3b>(y);
        for (int x = 0; x < resized.cols; ++x) {
            for (int c = 0; c < 3; ++c) {
                float v = static_cast<float>(row[x][c]) / 255.0f;
                out.data[static_cast<size_t>(c) * hw + static_cast<size_t>(y) * resized.cols + x] =
                    (v - config.channel_means[c]) / config.channel_stds[c];
            }
        }
    }
    return out;
}

nn::Tensor preprocess_file(const std::string& path, const PreprocessConfig& config) {
    return preprocess(load_image(path), config);
}

} // namespace dermgen
