#include "groundcount/grounding.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>

namespace groundcount::grounding {

namespace {

constexpr std::array<std::string_view, 3> kRowLabels{"upper", "middle", "lower"};
constexpr std::array<std::string_view, 3> kColLabels{"left", "center", "right"};

int grid_index(double coord, int extent) {
    const int idx = static_cast<int>(std::floor(3.0 * coord / extent));
    return std::clamp(idx, 0, 2);
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

// Shared by the prompt and training-target renderers: sort indices by the
// emission key and return the permutation.
template <typename BoxOf, typename CategoryOf, typename ConfidenceOf>
std::vector<std::size_t> emission_order(std::size_t n, BoxOf box_of, CategoryOf category_of,
                                        ConfidenceOf confidence_of) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const Box& ba = box_of(a);
        const Box& bb = box_of(b);
        if (ba.center_x() != bb.center_x()) return ba.center_x() < bb.center_x();
        if (ba.center_y() != bb.center_y()) return ba.center_y() > bb.center_y();
        const auto& ca = category_of(a);
        const auto& cb = category_of(b);
        if (ca != cb) return ca < cb;
        return confidence_of(a) > confidence_of(b);
    });
    return idx;
}

constexpr std::array<Rgb, 12> kPalette{{
    {255, 221, 0},    // yellow
    {255, 128, 0},    // orange
    {0, 200, 255},    // sky
    {255, 0, 128},    // magenta
    {0, 220, 90},     // green
    {140, 80, 255},   // violet
    {255, 60, 60},    // red
    {0, 120, 255},    // blue
    {180, 255, 0},    // lime
    {0, 255, 210},    // teal
    {255, 150, 200},  // pink
    {160, 110, 60},   // brown
}};

}  // namespace

std::string GridCell::label() const {
    std::string out(kRowLabels[static_cast<int>(row)]);
    out += '-';
    out += kColLabels[static_cast<int>(col)];
    return out;
}

GridCell assign_cell(const Box& box, int width, int height) {
    return {static_cast<GridRow>(grid_index(box.center_y(), height)),
            static_cast<GridCol>(grid_index(box.center_x(), width))};
}

GridCell assign_cell(const Detection& det, int width, int height) {
    return assign_cell(det.box, width, height);
}

void GroundingConfig::validate() const {
    if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0))
        throw ConfigError("confidence threshold must lie in [0,1]");
    if (confidence_decimals < 0 || confidence_decimals > 12)
        throw ConfigError("confidence decimals must lie in [0,12]");
    if (grid_size != 3) throw ConfigError("only a 3x3 grid is supported");
}

DetectionSet filter_detections(const DetectionSet& set, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw std::invalid_argument("threshold must lie in [0,1]");
    DetectionSet out{set.image_id, set.width, set.height, {}};
    std::copy_if(set.detections.begin(), set.detections.end(), std::back_inserter(out.detections),
                 [threshold](const Detection& d) { return d.confidence >= threshold; });
    return out;
}

std::vector<Detection> order_detections(const DetectionSet& set) {
    const auto& dets = set.detections;
    const auto order = emission_order(
        dets.size(), [&](std::size_t i) -> const Box& { return dets[i].box; },
        [&](std::size_t i) -> const std::string& { return dets[i].category; },
        [&](std::size_t i) { return dets[i].confidence; });
    std::vector<Detection> out;
    out.reserve(dets.size());
    for (std::size_t i : order) out.push_back(dets[i]);
    return out;
}

std::string format_confidence(double confidence, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, confidence);
    return buf;
}

GroundedPrompt render_prompt(const DetectionSet& set, const GroundingConfig& config) {
    config.validate();
    GroundedPrompt out;
    out.config = config;

    const auto ordered = order_detections(filter_detections(set, config.confidence_threshold));
    out.source_count = ordered.size();
    if (ordered.empty()) {
        out.rendered = config.empty_sentinel;
        return out;
    }

    std::map<std::string, int, std::less<>> next_index;
    out.lines.reserve(ordered.size());
    for (const auto& det : ordered) {
        std::string line = det.category;
        line += ' ';
        line += std::to_string(++next_index[det.category]);
        if (config.include_position) {
            line += ' ';
            line += assign_cell(det, set.width, set.height).label();
        }
        if (config.include_confidence) {
            line += ": ";
            line += format_confidence(det.confidence, config.confidence_decimals);
        }
        out.lines.push_back(std::move(line));
    }
    out.rendered = join(out.lines, "; ");
    return out;
}

std::string render_training_target(const AnnotationSet& ann) {
    const auto& objs = ann.objects;
    const auto order = emission_order(
        objs.size(), [&](std::size_t i) -> const Box& { return objs[i].box; },
        [&](std::size_t i) -> const std::string& { return objs[i].category; },
        [](std::size_t) { return 1.0; });

    std::map<std::string, int, std::less<>> next_index;
    std::vector<std::string> segments;
    segments.reserve(objs.size());
    for (std::size_t i : order) {
        const auto& obj = objs[i];
        segments.push_back(obj.category + " " + std::to_string(++next_index[obj.category]) +
                           " in " + assign_cell(obj.box, ann.width, ann.height).label());
    }
    return join(segments, "; ");
}

std::string base_user_prompt(std::string_view question, const std::optional<std::string>& context) {
    std::string out;
    if (context) {
        out += *context;
        out += '\n';
    }
    out += question;
    return out;
}

std::string augment_user_prompt(std::string_view question,
                                const std::optional<std::string>& context,
                                const GroundedPrompt& prompt) {
    std::string out = base_user_prompt(question, context);
    out += "\n\n";
    out += kGroundingHeader;
    out += '\n';
    out += prompt.rendered;
    out += '\n';
    return out;
}

Rgb category_color(std::string_view category) {
    // FNV-1a, 32-bit
    std::uint32_t h = 2166136261u;
    for (unsigned char ch : category) {
        h ^= ch;
        h *= 16777619u;
    }
    return kPalette[h % kPalette.size()];
}

Raster overlay_boxes(const Raster& image, const DetectionSet& set, int thickness) {
    if (image.width() != set.width || image.height() != set.height)
        throw std::invalid_argument("image is " + std::to_string(image.width()) + "x" +
                                    std::to_string(image.height()) + " but detections expect " +
                                    std::to_string(set.width) + "x" + std::to_string(set.height));
    if (thickness < 1) throw std::invalid_argument("outline thickness must be >= 1");

    Raster out = image;
    const int W = image.width(), H = image.height();
    for (const auto& det : set.detections) {
        const Rgb color = category_color(det.category);
        const int x1 = std::clamp(static_cast<int>(std::floor(det.box.x1)), 0, W - 1);
        const int y1 = std::clamp(static_cast<int>(std::floor(det.box.y1)), 0, H - 1);
        const int x2 = std::clamp(static_cast<int>(std::ceil(det.box.x2)) - 1, 0, W - 1);
        const int y2 = std::clamp(static_cast<int>(std::ceil(det.box.y2)) - 1, 0, H - 1);
        for (int y = y1; y <= y2; ++y) {
            const bool edge_row = y < y1 + thickness || y > y2 - thickness;
            for (int x = x1; x <= x2; ++x) {
                if (edge_row || x < x1 + thickness || x > x2 - thickness) out.at(x, y) = color;
            }
        }
    }
    return out;
}

}  // namespace groundcount::grounding
