#include "fcdd/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fcdd/data.hpp"
#include "fcdd/heatmap.hpp"
#include "fcdd/png_io.hpp"
#include "fcdd/scoring.hpp"

namespace fs = std::filesystem;

namespace fcdd {

std::vector<BoundingBox> parse_boxes(const std::string& text) {
    std::vector<BoundingBox> boxes;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        std::istringstream ls(line);
        BoundingBox b;
        double fields[5];
        if (!(ls >> b.class_id >> fields[0] >> fields[1] >> fields[2] >> fields[3] >> fields[4]))
            throw std::invalid_argument("parse_boxes: malformed line " + std::to_string(lineno) +
                                        ": '" + line + "'");
        std::string extra;
        if (ls >> extra)
            throw std::invalid_argument("parse_boxes: trailing fields on line " +
                                        std::to_string(lineno));
        b.cx = fields[0];
        b.cy = fields[1];
        b.bw = fields[2];
        b.bh = fields[3];
        b.confidence = fields[4];
        for (double v : fields)
            if (v < 0.0 || v > 1.0)
                throw std::invalid_argument("parse_boxes: value outside [0,1] on line " +
                                            std::to_string(lineno));
        boxes.push_back(b);
    }
    return boxes;
}

std::vector<DiskCrop> crop_disks(const Raster& image, const std::vector<BoundingBox>& boxes,
                                 std::vector<std::string>* warnings) {
    const Shape is = image.shape();
    const double W = is.w, H = is.h;

    std::vector<DiskCrop> crops;
    int idx = 0;
    for (const BoundingBox& b : boxes) {
        ++idx;
        if (!b.is_disk()) continue;
        const long x0 = std::lround(b.cx * W - b.bw * W / 2.0);
        const long x1 = std::lround(b.cx * W + b.bw * W / 2.0);
        const long y0 = std::lround(b.cy * H - b.bh * H / 2.0);
        const long y1 = std::lround(b.cy * H + b.bh * H / 2.0);
        const int cx0 = static_cast<int>(std::clamp<long>(x0, 0, is.w));
        const int cx1 = static_cast<int>(std::clamp<long>(x1, 0, is.w));
        const int cy0 = static_cast<int>(std::clamp<long>(y0, 0, is.h));
        const int cy1 = static_cast<int>(std::clamp<long>(y1, 0, is.h));
        if (cx1 <= cx0 || cy1 <= cy0) {
            if (warnings)
                warnings->push_back("skipped zero-area disk box #" + std::to_string(idx) +
                                    " after clamping");
            continue;
        }

        DiskCrop dc;
        dc.box = b;
        dc.crop = Raster(Shape{1, is.c, cy1 - cy0, cx1 - cx0});
        for (int c = 0; c < is.c; ++c)
            for (int y = cy0; y < cy1; ++y) {
                const double* src = image.row(0, c, y);
                double* dst = dc.crop.row(0, c, y - cy0);
                for (int x = cx0; x < cx1; ++x) dst[x - cx0] = src[x];
            }
        crops.push_back(std::move(dc));
    }
    return crops;
}

nlohmann::json InspectionReport::to_json() const {
    nlohmann::json j;
    j["image"] = image_id;
    j["threshold"] = threshold;
    j["threshold_source"] = threshold_source;
    j["disks"] = nlohmann::json::array();
    for (const DiskReport& d : disks) {
        j["disks"].push_back({{"box",
                               {{"class", d.box.class_id},
                                {"cx", d.box.cx},
                                {"cy", d.box.cy},
                                {"w", d.box.bw},
                                {"h", d.box.bh},
                                {"conf", d.box.confidence}}},
                              {"score", d.score},
                              {"anomalous", d.anomalous},
                              {"heatmap", d.heatmap_path},
                              {"preview", d.preview_path}});
    }
    j["summary"] = {{"n_disks", static_cast<int>(disks.size())},
                    {"n_normal", n_normal},
                    {"n_anomalous", n_anomalous},
                    {"n_non_disk_boxes", n_non_disk_boxes}};
    j["warnings"] = warnings;
    j["timestamp"] = timestamp;
    return j;
}

InspectionReport inspect(const fs::path& image_path, const fs::path& boxes_path,
                         const fs::path& checkpoint_path, double threshold,
                         const std::string& threshold_source, const fs::path& out_dir) {
    InspectionReport report;
    report.image_id = image_path.stem().string();
    report.threshold = threshold;
    report.threshold_source = threshold_source;

    const Raster image = read_png(image_path);

    std::string boxes_text;
    {
        std::ifstream in(boxes_path);
        if (!in) throw std::runtime_error("inspect: cannot open boxes file " + boxes_path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        boxes_text = ss.str();
    }
    const std::vector<BoundingBox> boxes = parse_boxes(boxes_text);
    for (const BoundingBox& b : boxes)
        if (!b.is_disk()) ++report.n_non_disk_boxes;

    LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
    Network& net = ckpt.net;

    const std::vector<DiskCrop> crops = crop_disks(image, boxes, &report.warnings);
    fs::create_directories(out_dir);

    // score all crops first so previews share one batch-wide max
    std::vector<Raster> heatmaps;
    std::vector<double> scores;
    double batch_min = 0.0, batch_max = 0.0;
    for (const DiskCrop& dc : crops) {
        const Raster input =
            preprocess_image(dc.crop, ckpt.meta.channel_mean, ckpt.meta.channel_std,
                             net.config().in_h, net.config().in_w);
        Raster hm = fcdd_heatmaps(net, input, ckpt.meta.sigma);
        scores.push_back(image_score(hm));
        for (std::size_t i = 0; i < hm.size(); ++i) {
            batch_min = heatmaps.empty() && i == 0 ? hm[i] : std::min(batch_min, hm[i]);
            batch_max = std::max(batch_max, hm[i]);
        }
        heatmaps.push_back(std::move(hm));
    }

    for (std::size_t i = 0; i < crops.size(); ++i) {
        DiskReport d;
        d.box = crops[i].box;
        d.score = scores[i];
        d.anomalous = scores[i] >= threshold;
        (d.anomalous ? report.n_anomalous : report.n_normal) += 1;

        Heatmap hm;
        hm.values = heatmaps[i];
        hm.model_id = checkpoint_path.stem().string();
        hm.sample_id = report.image_id + "_disk" + std::to_string(i);
        hm.sigma = ckpt.meta.sigma;

        HeatmapExportPaths paths;
        paths.raster = out_dir / (hm.sample_id + ".hmf");
        paths.preview = out_dir / (hm.sample_id + ".png");
        paths.sidecar = out_dir / (hm.sample_id + ".json");
        export_heatmap(hm, paths, batch_min, batch_max);
        d.heatmap_path = paths.raster.filename().string();
        d.preview_path = paths.preview.filename().string();
        report.disks.push_back(std::move(d));
    }

    {
        const auto now = std::chrono::system_clock::now();
        const std::time_t t = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        report.timestamp = buf;
    }

    std::ofstream os(out_dir / (report.image_id + "_report.json"));
    os << report.to_json().dump(2) << "\n";
    return report;
}

}  // namespace fcdd
