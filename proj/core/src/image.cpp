#include "tamos/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tamos {

void write_ppm(const Image& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(image.pixels.size()));
    for (Eigen::Index i = 0; i < image.pixels.rows(); ++i) {
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(image.pixels(i, c), 0.0, 1.0);
            bytes[static_cast<std::size_t>(i * 3 + c)] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {

std::string next_token(std::istream& in) {
    std::string tok;
    while (in) {
        const int ch = in.peek();
        if (ch == '#') {
            std::string skip;
            std::getline(in, skip);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    in >> tok;
    return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    if (next_token(in) != "P6") throw std::runtime_error(path.string() + ": not a binary PPM");
    const int width = std::stoi(next_token(in));
    const int height = std::stoi(next_token(in));
    const int maxval = std::stoi(next_token(in));
    if (maxval != 255) throw std::runtime_error(path.string() + ": only 8-bit PPM supported");
    in.get();
    Image img(height, width);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw std::runtime_error(path.string() + ": truncated pixel data");
    for (Eigen::Index i = 0; i < img.pixels.rows(); ++i) {
        for (int c = 0; c < 3; ++c) img.pixels(i, c) = bytes[static_cast<std::size_t>(i * 3 + c)] / 255.0;
    }
    return img;
}

Image resample_window(const Image& src, double x0, double y0, double w, double h, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0 || !(w > 0.0) || !(h > 0.0)) {
        throw std::invalid_argument("resample_window: empty window or output");
    }
    Image out(out_h, out_w);
    const double sx = w / out_w;
    const double sy = h / out_h;
    auto sample = [&](int y, int x, int c) {
        if (x < 0 || y < 0 || x >= src.width || y >= src.height) return 0.0;
        return src.pixels(src.index(y, x), c);
    };
    for (int oy = 0; oy < out_h; ++oy) {
        const double fy = y0 + (oy + 0.5) * sy - 0.5;
        const int y_lo = static_cast<int>(std::floor(fy));
        const double ty = fy - y_lo;
        for (int ox = 0; ox < out_w; ++ox) {
            const double fx = x0 + (ox + 0.5) * sx - 0.5;
            const int x_lo = static_cast<int>(std::floor(fx));
            const double tx = fx - x_lo;
            for (int c = 0; c < 3; ++c) {
                const double top = (1.0 - tx) * sample(y_lo, x_lo, c) + tx * sample(y_lo, x_lo + 1, c);
                const double bot = (1.0 - tx) * sample(y_lo + 1, x_lo, c) + tx * sample(y_lo + 1, x_lo + 1, c);
                out.pixels(out.index(oy, ox), c) = (1.0 - ty) * top + ty * bot;
            }
        }
    }
    return out;
}

Image flip_horizontal(const Image& src) {
    Image out(src.height, src.width);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            out.pixels.row(out.index(y, x)) = src.pixels.row(src.index(y, src.width - 1 - x));
        }
    }
    return out;
}

Image color_gain(const Image& src, double r, double g, double b) {
    Image out = src;
    out.pixels.col(0) = (out.pixels.col(0) * r).cwiseMin(1.0).cwiseMax(0.0);
    out.pixels.col(1) = (out.pixels.col(1) * g).cwiseMin(1.0).cwiseMax(0.0);
    out.pixels.col(2) = (out.pixels.col(2) * b).cwiseMin(1.0).cwiseMax(0.0);
    return out;
}

PreparedFrame prepare_frame(const Image& src, int out_h, int out_w) {
    if (src.height <= 0 || src.width <= 0) throw std::invalid_argument("prepare_frame: empty image");
    if (src.height == out_h && src.width == out_w) return {src, BoxTransform{}};
    const double s = std::min(static_cast<double>(out_h) / src.height, static_cast<double>(out_w) / src.width);
    return crop_window(src, 0.0, 0.0, s, out_h, out_w);
}

PreparedFrame crop_window(const Image& src, double x0, double y0, double scale, int out_h, int out_w) {
    if (!(scale > 0.0)) throw std::invalid_argument("crop_window: scale must be positive");
    PreparedFrame out;
    out.image = resample_window(src, x0, y0, out_w / scale, out_h / scale, out_h, out_w);
    out.to_working = BoxTransform::translation(-x0, -y0).followed_by(BoxTransform::scaling(scale));
    return out;
}

}  // namespace tamos
