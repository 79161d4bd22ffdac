#include "groundcount/raster.hpp"

#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include <png.h>

namespace groundcount {

static_assert(sizeof(Rgb) == 3, "Rgb must be tightly packed for PNG I/O");

Raster::Raster(int width, int height, Rgb fill) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("raster dimensions must be positive");
    pixels_.assign(static_cast<std::size_t>(width) * height, fill);
}

Raster decode_png(std::span<const std::uint8_t> bytes) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw std::runtime_error(std::string("PNG decode failed: ") + img.message);
    img.format = PNG_FORMAT_RGB;
    Raster out(static_cast<int>(img.width), static_cast<int>(img.height));
    auto* dst = reinterpret_cast<png_bytep>(out.pixels().data());
    if (!png_image_finish_read(&img, nullptr, dst, 0, nullptr)) {
        png_image_free(&img);
        throw std::runtime_error(std::string("PNG decode failed: ") + img.message);
    }
    return out;
}

std::vector<std::uint8_t> encode_png(const Raster& image) {
    if (image.empty()) throw std::invalid_argument("cannot encode an empty raster");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = PNG_FORMAT_RGB;

    const auto* src = reinterpret_cast<const void*>(image.pixels().data());
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, src, 0, nullptr))
        throw std::runtime_error(std::string("PNG encode failed: ") + img.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, src, 0, nullptr))
        throw std::runtime_error(std::string("PNG encode failed: ") + img.message);
    out.resize(size);
    return out;
}

Raster read_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

void write_png(const std::filesystem::path& path, const Raster& image) {
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace groundcount
