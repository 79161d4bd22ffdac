#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "groundcount/types.hpp"

namespace gc_test {

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(GC_FIXTURE_DIR) / name;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("gc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Random scene with boxes inside a W x H image. Categories come from a small
/// pool so per-category indexing gets exercised; `grid_snap` puts many centers
/// exactly on shared coordinates to stress tie-breaking.
inline groundcount::DetectionSet random_scene(std::mt19937_64& rng, int max_dets = 30,
                                              bool grid_snap = false) {
    static const char* kCats[] = {"person", "dog", "bowl", "cup", "skateboard", "car"};
    std::uniform_int_distribution<int> wd(50, 1200), nd(0, max_dets), cd(0, 5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    groundcount::DetectionSet s;
    s.image_id = "scene";
    s.width = wd(rng);
    s.height = wd(rng);
    const int n = nd(rng);
    for (int i = 0; i < n; ++i) {
        groundcount::Detection d;
        d.category = kCats[cd(rng)];
        d.confidence = grid_snap ? std::round(u(rng) * 10.0) / 10.0 : u(rng);
        double cx = u(rng) * s.width, cy = u(rng) * s.height;
        if (grid_snap) {
            std::uniform_int_distribution<int> k(1, 5);
            cx = k(rng) * (s.width / 6.0);
            cy = k(rng) * (s.height / 6.0);
        }
        const double hw = std::min({cx, s.width - cx, u(rng) * 40.0 + 0.5});
        const double hh = std::min({cy, s.height - cy, u(rng) * 40.0 + 0.5});
        d.box = {cx - hw, cy - hh, cx + hw, cy + hh};
        s.detections.push_back(d);
    }
    return s;
}

}  // namespace gc_test
