#pragma once

#include "tamos/autodiff.hpp"
#include "tamos/geometry.hpp"

#include <filesystem>

namespace tamos {

/// RGB image with channel values in [0, 1], stored one pixel per row.
struct Image {
    int height = 0;
    int width = 0;
    Matrix pixels;  // (height * width) x 3

    Image() = default;
    Image(int h, int w) : height(h), width(w), pixels(Matrix::Zero(static_cast<Eigen::Index>(h) * w, 3)) {}

    [[nodiscard]] Eigen::Index index(int y, int x) const { return static_cast<Eigen::Index>(y) * width + x; }
    bool operator==(const Image& other) const {
        return height == other.height && width == other.width && pixels == other.pixels;
    }
};

/// Binary PPM (P6, 8 bit). Values are quantised on write.
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

/// Bilinear resampling of the window [x0, x0+w) x [y0, y0+h) (source pixel
/// units, may extend past the border; outside reads as zero) into an
/// out_h x out_w image.
Image resample_window(const Image& src, double x0, double y0, double w, double h, int out_h, int out_w);

Image flip_horizontal(const Image& src);

/// Per-channel gain, clamped to [0, 1].
Image color_gain(const Image& src, double r, double g, double b);

/// A frame brought to the working resolution, with the map from original
/// pixel coordinates to working coordinates.
struct PreparedFrame {
    Image image;
    BoxTransform to_working;
};

/// Uniform rescale so the frame fits out_h x out_w, padded with zeros on the
/// right and bottom. Frames already at that size pass through untouched.
PreparedFrame prepare_frame(const Image& src, int out_h, int out_w);

/// Crops the source window (x0, y0, w, h) to an out_h x out_w image with a
/// uniform scale out_w / w; returns the coordinate map into the crop.
PreparedFrame crop_window(const Image& src, double x0, double y0, double scale, int out_h, int out_w);

}  // namespace tamos
