#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "groundcount/raster.hpp"
#include "groundcount/types.hpp"

namespace groundcount::grounding {

enum class GridRow { upper, middle, lower };
enum class GridCol { left, center, right };

struct GridCell {
    GridRow row = GridRow::middle;
    GridCol col = GridCol::center;

    /// "upper-left", "middle-center", ...
    std::string label() const;
    bool operator==(const GridCell&) const = default;
};

/// Cell holding the box center on a 3x3 partition of the image. Centers on a
/// third-line go to the higher-index cell; the right/bottom edges clamp to 2.
GridCell assign_cell(const Detection& det, int width, int height);
GridCell assign_cell(const Box& box, int width, int height);

struct GroundingConfig {
    double confidence_threshold = 0.5;
    bool include_position = true;
    bool include_confidence = true;
    int confidence_decimals = 2;
    std::string empty_sentinel = "no objects detected";
    int grid_size = 3;

    /// Throws ConfigError on out-of-range fields.
    void validate() const;
    bool operator==(const GroundingConfig&) const = default;
};

struct GroundedPrompt {
    std::vector<std::string> lines;
    std::string rendered;
    GroundingConfig config;
    std::size_t source_count = 0;
};

/// Keeps detections with confidence >= threshold, in input order.
DetectionSet filter_detections(const DetectionSet& set, double threshold);

/// Emission order: center x ascending, center y descending (lower first),
/// category ascending, confidence descending, input index ascending.
std::vector<Detection> order_detections(const DetectionSet& set);

/// Fixed-point rendering of the exact binary value; exact ties go to even.
std::string format_confidence(double confidence, int decimals);

GroundedPrompt render_prompt(const DetectionSet& set, const GroundingConfig& config = {});

/// Ground-truth description in "[class] [index] in [position]" form, joined by "; ".
std::string render_training_target(const AnnotationSet& ann);

/// The user text without grounding: context (if any) on its own line, then the question.
std::string base_user_prompt(std::string_view question, const std::optional<std::string>& context);

inline constexpr std::string_view kGroundingHeader =
    "Detected objects (from an object detection model):";

/// `{context\n}{question}\n\n<header>\n{block}\n`
std::string augment_user_prompt(std::string_view question,
                                const std::optional<std::string>& context,
                                const GroundedPrompt& prompt);

/// Palette color for a category, stable across runs and platforms.
Rgb category_color(std::string_view category);

/// Copy of `image` with a rectangle outline per detection. Throws
/// std::invalid_argument when the image size differs from the set's.
Raster overlay_boxes(const Raster& image, const DetectionSet& set, int thickness = 2);

}  // namespace groundcount::grounding
