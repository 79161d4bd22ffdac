#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "groundcount/ingest.hpp"
#include "groundcount/types.hpp"

namespace groundcount::odm {

enum class ProviderKind { file_backed, external_service };

class UnknownImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a provider already dropped detections the caller still needs.
class PrefilterError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Source of detections for one image. Implementations are external to the
/// toolkit: a precomputed file or a detection service.
class DetectorProvider {
public:
    virtual ~DetectorProvider() = default;

    virtual ProviderKind kind() const = 0;
    virtual const std::string& source() const = 0;
    /// Threshold the provider applied before handing results over (0 = none).
    virtual double threshold_at_source() const = 0;

    /// Uncached fetch. Throws UnknownImageError for images it cannot serve.
    virtual DetectionSet fetch(const std::string& image_ref) = 0;

    std::uint64_t calls() const { return calls_.load(); }

protected:
    void count_call() { ++calls_; }

private:
    std::atomic<std::uint64_t> calls_{0};
};

class FileProvider final : public DetectorProvider {
public:
    explicit FileProvider(const std::filesystem::path& path, double threshold_at_source = 0.0);
    FileProvider(std::string source, ingest::DetectionMap detections, double threshold_at_source = 0.0);

    ProviderKind kind() const override { return ProviderKind::file_backed; }
    const std::string& source() const override { return source_; }
    double threshold_at_source() const override { return threshold_; }
    DetectionSet fetch(const std::string& image_ref) override;

    const ingest::DetectionMap& detections() const { return detections_; }

private:
    std::string source_;
    ingest::DetectionMap detections_;
    double threshold_;
};

/// POSTs image bytes to a detection service that answers with the detections
/// JSON schema. `load_image` maps an image_ref to the bytes to send.
class ServiceProvider final : public DetectorProvider {
public:
    using ImageLoader = std::function<std::vector<std::uint8_t>(const std::string& image_ref)>;

    ServiceProvider(std::string endpoint, ImageLoader load_image, double threshold_at_source = 0.0,
                    double timeout_seconds = 30.0);

    ProviderKind kind() const override { return ProviderKind::external_service; }
    const std::string& source() const override { return endpoint_; }
    double threshold_at_source() const override { return threshold_; }
    DetectionSet fetch(const std::string& image_ref) override;

private:
    std::string endpoint_;
    ImageLoader load_image_;
    double threshold_;
    double timeout_seconds_;
};

/// Throws PrefilterError when `requested_threshold` < the provider's own threshold.
void check_threshold(const DetectorProvider& provider, double requested_threshold);

/// Thread-safe memo of provider results keyed by (provider, image_ref).
/// Concurrent misses on the same key share a single fetch.
class DetectionCache {
public:
    DetectionSet get(DetectorProvider& provider, const std::string& image_ref,
                     double requested_threshold);

    struct WarmResult {
        std::size_t loaded = 0;
        std::vector<std::pair<std::string, std::string>> failures;  // image_ref, message
    };

    WarmResult warm(DetectorProvider& provider, const std::vector<std::string>& image_refs,
                    double requested_threshold);

    std::size_t size() const;
    void clear();

private:
    using Key = std::pair<const DetectorProvider*, std::string>;
    mutable std::mutex mu_;
    std::map<Key, std::shared_future<DetectionSet>> entries_;
};

}  // namespace groundcount::odm
