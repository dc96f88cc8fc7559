#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fcdd/tensor.hpp"

namespace fcdd {

/// Normalized detector box: "class cx cy w h conf", all in [0, 1].
/// class 0 = insulator, 1 = disk; only disks are croppable.
struct BoundingBox {
    int class_id = 0;
    double cx = 0.0, cy = 0.0, bw = 0.0, bh = 0.0;
    double confidence = 0.0;

    bool is_disk() const { return class_id == 1; }
};

std::vector<BoundingBox> parse_boxes(const std::string& text);

struct DiskCrop {
    Raster crop;  // raw pixels, (1, c, ch, cw)
    BoundingBox box;
};

/// Axis-aligned crops of the disk boxes, clamped to image bounds.
/// Zero-area boxes after clamping are skipped with a warning entry.
std::vector<DiskCrop> crop_disks(const Raster& image, const std::vector<BoundingBox>& boxes,
                                 std::vector<std::string>* warnings = nullptr);

struct DiskReport {
    BoundingBox box;
    double score = 0.0;
    bool anomalous = false;
    std::string heatmap_path, preview_path;
};

struct InspectionReport {
    std::string image_id;
    double threshold = 0.0;
    std::string threshold_source;
    std::vector<DiskReport> disks;
    int n_normal = 0, n_anomalous = 0;
    int n_non_disk_boxes = 0;
    std::vector<std::string> warnings;
    std::string timestamp;  // kept separate so reports stay byte-comparable

    nlohmann::json to_json() const;
};

/// Scores every disk crop of one aerial image with a trained model and
/// writes the per-disk heatmaps next to the report.
InspectionReport inspect(const std::filesystem::path& image_path,
                         const std::filesystem::path& boxes_path,
                         const std::filesystem::path& checkpoint_path, double threshold,
                         const std::string& threshold_source,
                         const std::filesystem::path& out_dir);

}  // namespace fcdd
