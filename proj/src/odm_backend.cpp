#include "groundcount/odm_backend.hpp"

#include <chrono>

#include "httplib.h"

namespace groundcount::odm {

FileProvider::FileProvider(const std::filesystem::path& path, double threshold_at_source)
    : FileProvider(path.string(), ingest::load_detections(path), threshold_at_source) {}

FileProvider::FileProvider(std::string source, ingest::DetectionMap detections,
                           double threshold_at_source)
    : source_(std::move(source)), detections_(std::move(detections)), threshold_(threshold_at_source) {
    if (!(threshold_ >= 0.0 && threshold_ <= 1.0))
        throw ConfigError("provider threshold must lie in [0,1]");
}

DetectionSet FileProvider::fetch(const std::string& image_ref) {
    count_call();
    auto it = detections_.find(image_ref);
    if (it == detections_.end())
        throw UnknownImageError("no detections for image '" + image_ref + "' in " + source_);
    return it->second;
}

ServiceProvider::ServiceProvider(std::string endpoint, ImageLoader load_image,
                                 double threshold_at_source, double timeout_seconds)
    : endpoint_(std::move(endpoint)),
      load_image_(std::move(load_image)),
      threshold_(threshold_at_source),
      timeout_seconds_(timeout_seconds) {
    if (!(threshold_ >= 0.0 && threshold_ <= 1.0))
        throw ConfigError("provider threshold must lie in [0,1]");
    if (endpoint_.find("://") == std::string::npos)
        throw ConfigError("detector endpoint must start with http:// or https://");
}

DetectionSet ServiceProvider::fetch(const std::string& image_ref) {
    count_call();
    std::vector<std::uint8_t> bytes;
    try {
        bytes = load_image_(image_ref);
    } catch (const std::exception& e) {
        throw UnknownImageError("cannot load image '" + image_ref + "': " + e.what());
    }

    const auto scheme = endpoint_.find("://");
    const auto slash = endpoint_.find('/', scheme + 3);
    httplib::Client client(endpoint_.substr(0, slash));
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(timeout_seconds_));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    const std::string path = slash == std::string::npos ? "/" : endpoint_.substr(slash);
    auto res = client.Post(path, std::string(bytes.begin(), bytes.end()), "application/octet-stream");
    if (!res) throw std::runtime_error("detector service unreachable: " + httplib::to_string(res.error()));
    if (res->status == 404) throw UnknownImageError("detector service does not know '" + image_ref + "'");
    if (res->status < 200 || res->status >= 300)
        throw std::runtime_error("detector service returned HTTP " + std::to_string(res->status));

    auto map = ingest::parse_detections(nlohmann::json::parse(res->body), endpoint_);
    if (auto it = map.find(image_ref); it != map.end()) return it->second;
    if (map.size() == 1) {
        DetectionSet set = map.begin()->second;
        set.image_id = image_ref;
        return set;
    }
    throw std::runtime_error("detector service reply does not contain image '" + image_ref + "'");
}

void check_threshold(const DetectorProvider& provider, double requested_threshold) {
    if (requested_threshold < provider.threshold_at_source())
        throw PrefilterError("irrecoverable pre-filtering: provider " + provider.source() +
                             " already dropped detections below " +
                             std::to_string(provider.threshold_at_source()) + ", requested " +
                             std::to_string(requested_threshold));
}

DetectionSet DetectionCache::get(DetectorProvider& provider, const std::string& image_ref,
                                 double requested_threshold) {
    check_threshold(provider, requested_threshold);

    Key key{&provider, image_ref};
    std::promise<DetectionSet> promise;
    std::shared_future<DetectionSet> pending;
    {
        std::lock_guard lock(mu_);
        if (auto it = entries_.find(key); it != entries_.end())
            pending = it->second;
        else
            entries_.emplace(key, promise.get_future().share());
    }
    if (pending.valid()) return pending.get();

    try {
        DetectionSet set = provider.fetch(image_ref);
        promise.set_value(set);
        return set;
    } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard lock(mu_);
        entries_.erase(key);
        throw;
    }
}

DetectionCache::WarmResult DetectionCache::warm(DetectorProvider& provider,
                                                const std::vector<std::string>& image_refs,
                                                double requested_threshold) {
    check_threshold(provider, requested_threshold);
    WarmResult out;
    for (const auto& ref : image_refs) {
        try {
            get(provider, ref, requested_threshold);
            ++out.loaded;
        } catch (const std::exception& e) {
            out.failures.emplace_back(ref, e.what());
        }
    }
    return out;
}

std::size_t DetectionCache::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

void DetectionCache::clear() {
    std::lock_guard lock(mu_);
    entries_.clear();
}

}  // namespace groundcount::odm
