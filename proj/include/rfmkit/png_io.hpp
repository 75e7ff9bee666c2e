#pragma once
// PNG persistence via libpng's simplified API. Images are 8-bit RGB,
// masks are 8-bit grayscale with values {0,255}.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "rfmkit/core.hpp"
#include "rfmkit/image.hpp"

namespace rfm {

inline std::uint8_t quantize_8bit(double v) {
    const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<std::uint8_t>(clamped * 255.0 + 0.5);
}

inline RasterImage load_png(const std::filesystem::path& path, std::string source_id = {}) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.string().c_str()))
        throw IoError("cannot read PNG '" + path.string() + "': " + png.message);
    png.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        std::string message = png.message;
        png_image_free(&png);
        throw IoError("cannot decode PNG '" + path.string() + "': " + message);
    }
    RasterImage img;
    img.width = static_cast<int>(png.width);
    img.height = static_cast<int>(png.height);
    img.source_id = source_id.empty() ? path.stem().string() : std::move(source_id);
    img.pixels.resize(buffer.size());
    for (size_t i = 0; i < buffer.size(); ++i)
        img.pixels[i] = buffer[i] / 255.0;
    img.validate();
    return img;
}

inline void save_png(const RasterImage& img, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::vector<std::uint8_t> buffer(img.pixels.size());
    for (size_t i = 0; i < img.pixels.size(); ++i)
        buffer[i] = quantize_8bit(img.pixels[i]);
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, buffer.data(), 0, nullptr))
        throw IoError("cannot write PNG '" + path.string() + "': " + png.message);
}

inline std::vector<std::uint8_t> encode_png(const RasterImage& img) {
    std::vector<std::uint8_t> raw(img.pixels.size());
    for (size_t i = 0; i < img.pixels.size(); ++i)
        raw[i] = quantize_8bit(img.pixels[i]);
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, raw.data(), 0, nullptr))
        throw IoError(std::string("cannot size PNG buffer: ") + png.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, raw.data(), 0, nullptr))
        throw IoError(std::string("cannot encode PNG: ") + png.message);
    out.resize(size);
    return out;
}

inline BinaryMask load_mask_png(const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.string().c_str()))
        throw IoError("cannot read mask PNG '" + path.string() + "': " + png.message);
    png.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        std::string message = png.message;
        png_image_free(&png);
        throw IoError("cannot decode mask PNG '" + path.string() + "': " + message);
    }
    BinaryMask m;
    m.width = static_cast<int>(png.width);
    m.height = static_cast<int>(png.height);
    m.bits.resize(buffer.size());
    for (size_t i = 0; i < buffer.size(); ++i)
        m.bits[i] = buffer[i] >= 128 ? 1 : 0;
    return m;
}

inline void save_mask_png(const BinaryMask& mask, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::vector<std::uint8_t> buffer(mask.bits.size());
    for (size_t i = 0; i < mask.bits.size(); ++i)
        buffer[i] = mask.bits[i] ? 255 : 0;
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(mask.width);
    png.height = static_cast<png_uint_32>(mask.height);
    png.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, buffer.data(), 0, nullptr))
        throw IoError("cannot write mask PNG '" + path.string() + "': " + png.message);
}

} // namespace rfm
