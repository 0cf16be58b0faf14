#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "unicb/tensor.hpp"

namespace unicb {

/// H × W × 3 RGB in [0, 1], row-major with channels fastest.
struct Image {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<double> rgb;

    Image() = default;
    Image(std::size_t height, std::size_t width, double fill = 0.0)
        : h(height), w(width), rgb(height * width * 3, fill) {}

    double& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * w + x) * 3 + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * w + x) * 3 + c]; }
    void clamp();

    friend bool operator==(const Image&, const Image&) = default;
};

/// Cells × (patch·patch·3) matrix; cells in raster order.
std::vector<double> patchify(const Image& image, std::size_t patch);
Image unpatchify(std::span<const double> patches, std::size_t h, std::size_t w, std::size_t patch);

double image_mse(const Image& a, const Image& b);
/// Peak signal-to-noise ratio for unit-range images, capped at kPsnrCap.
double psnr_from_mse(double mse);
inline constexpr double kPsnrCap = 99.0;

void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

}  // namespace unicb
