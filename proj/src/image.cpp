#include "unicb/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace unicb {

void Image::clamp() {
    for (auto& v : rgb) v = std::clamp(v, 0.0, 1.0);
}

std::vector<double> patchify(const Image& image, std::size_t patch) {
    if (patch == 0 || image.h % patch != 0 || image.w % patch != 0) {
        throw ShapeError("image " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                         " is not divisible by patch " + std::to_string(patch));
    }
    const std::size_t gh = image.h / patch, gw = image.w / patch, width = patch * patch * 3;
    std::vector<double> out(gh * gw * width);
    for (std::size_t i = 0; i < gh; ++i) {
        for (std::size_t j = 0; j < gw; ++j) {
            double* dst = out.data() + (i * gw + j) * width;
            for (std::size_t y = 0; y < patch; ++y) {
                const double* src = &image.rgb[((i * patch + y) * image.w + j * patch) * 3];
                std::copy_n(src, patch * 3, dst + y * patch * 3);
            }
        }
    }
    return out;
}

Image unpatchify(std::span<const double> patches, std::size_t h, std::size_t w, std::size_t patch) {
    const std::size_t width = patch * patch * 3;
    if (patches.size() != h * w * width) throw ShapeError("unpatchify: wrong number of values");
    Image img(h * patch, w * patch);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const double* src = patches.data() + (i * w + j) * width;
            for (std::size_t y = 0; y < patch; ++y) {
                std::copy_n(src + y * patch * 3, patch * 3,
                            &img.rgb[((i * patch + y) * img.w + j * patch) * 3]);
            }
        }
    }
    return img;
}

double image_mse(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w) throw ShapeError("image_mse: size mismatch");
    if (a.rgb.empty()) throw ShapeError("image_mse: empty image");
    double total = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = a.rgb[i] - b.rgb[i];
        total += d * d;
    }
    return total / static_cast<double>(a.rgb.size());
}

double psnr_from_mse(double mse) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P6\n" << image.w << ' ' << image.h << "\n255\n";
    for (double v : image.rgb) {
        const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        out.put(static_cast<char>(byte));
    }
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255) throw std::runtime_error(path.string() + ": not an 8-bit P6 file");
    in.get();
    Image img(h, w);
    for (auto& v : img.rgb) {
        const int c = in.get();
        if (c == EOF) throw std::runtime_error(path.string() + ": truncated pixel data");
        v = static_cast<double>(c) / 255.0;
    }
    return img;
}

}  // namespace unicb
