#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace groundcount {

enum class Task { object, attribute, positional, counting, sentiment };
enum class Variant { base, sec, icc, ccs };
enum class Answer { yes, no };
enum class Verdict { yes, no, indeterminate };

inline constexpr Task kAllTasks[] = {Task::object, Task::attribute, Task::positional,
                                     Task::counting, Task::sentiment};
inline constexpr Variant kAllVariants[] = {Variant::base, Variant::sec, Variant::icc,
                                           Variant::ccs};

std::string_view to_string(Task t);
std::string_view to_string(Variant v);
std::string_view to_string(Answer a);
std::string_view to_string(Verdict v);

std::optional<Task> parse_task(std::string_view s);
std::optional<Variant> parse_variant(std::string_view s);
std::optional<Answer> parse_answer(std::string_view s);

/// Axis-aligned box in corner form, absolute pixels.
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double center_x() const { return (x1 + x2) / 2.0; }
    double center_y() const { return (y1 + y2) / 2.0; }

    bool operator==(const Box&) const = default;
};

struct Detection {
    std::string category;
    double confidence = 0.0;
    Box box;

    bool operator==(const Detection&) const = default;
};

struct DetectionSet {
    std::string image_id;
    int width = 0;
    int height = 0;
    std::vector<Detection> detections;

    bool operator==(const DetectionSet&) const = default;
};

struct VqaRecord {
    std::string record_id;
    std::string image_ref;
    Task task = Task::object;
    Variant variant = Variant::base;
    std::string question;
    std::optional<std::string> context;
    Answer gold = Answer::no;

    bool operator==(const VqaRecord&) const = default;
};

struct GroundTruthObject {
    std::string category;
    Box box;  // converted from COCO (x, y, w, h)

    bool operator==(const GroundTruthObject&) const = default;
};

struct AnnotationSet {
    std::string image_id;
    std::string file_name;
    int width = 0;
    int height = 0;
    std::vector<GroundTruthObject> objects;

    bool operator==(const AnnotationSet&) const = default;
};

/// Raised for configuration mistakes the user can fix (CLI exit code 1).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace groundcount
