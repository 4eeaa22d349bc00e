#pragma once

#include "tamos/autodiff.hpp"

#include <optional>
#include <utility>

namespace tamos {

/// Axis-aligned box in pixels: (x, y) is the top-left corner.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    [[nodiscard]] double area() const { return w * h; }
    [[nodiscard]] double right() const { return x + w; }
    [[nodiscard]] double bottom() const { return y + h; }
    [[nodiscard]] double center_x() const { return x + 0.5 * w; }
    [[nodiscard]] double center_y() const { return y + 0.5 * h; }
    [[nodiscard]] bool valid() const;

    bool operator==(const Box&) const = default;
};

/// An absent target is std::nullopt, never a degenerate box.
using MaybeBox = std::optional<Box>;

struct GridSpec {
    int height_cells = 24;
    int width_cells = 36;
    int stride = 16;
    int image_height = 384;
    int image_width = 576;

    /// Grid covering an image at the given stride (ceil division).
    static GridSpec for_image(int image_height, int image_width, int stride);

    [[nodiscard]] int cells() const { return height_cells * width_cells; }
    [[nodiscard]] double diagonal() const;
    [[nodiscard]] double cell_center_x(int col) const { return (col + 0.5) * stride; }
    [[nodiscard]] double cell_center_y(int row) const { return (row + 0.5) * stride; }
    /// Same image at half the stride (the 2h x 2w level).
    [[nodiscard]] GridSpec doubled() const;

    bool operator==(const GridSpec&) const = default;
};

/// Dense per-cell scalar maps, one column per channel.
struct ScoreMap {
    GridSpec grid;
    Matrix values;  // cells x channels

    [[nodiscard]] double at(int row, int col, int channel = 0) const {
        return values(static_cast<Eigen::Index>(row) * grid.width_cells + col, channel);
    }
};

/// Per-cell (left, top, right, bottom) distances normalised by the image diagonal.
struct LtrbMap {
    GridSpec grid;
    Matrix values;  // cells x 4

    [[nodiscard]] double at(int row, int col, int side) const {
        return values(static_cast<Eigen::Index>(row) * grid.width_cells + col, side);
    }
};

double iou(const Box& a, const Box& b);

/// Generalised IoU. Throws std::invalid_argument for a zero-area box.
double giou(const Box& a, const Box& b);

/// Isotropic Gaussian centred on the box centre, peak normalised to 1.
/// Absent targets produce an all-zero map.
ScoreMap gaussian_map(const MaybeBox& box, const GridSpec& grid, double sigma_cells);

/// FCOS-style distances from every cell centre to the box edges, divided by
/// the image diagonal; negative sides clamp to zero.
LtrbMap ltrb_map(const Box& box, const GridSpec& grid);

struct DecodedBox {
    Box box;
    double presence = 0.0;
    bool low_confidence = false;
    int cell = 0;
};

/// Read out the box at the score argmax (lowest row-major index on ties).
/// `channel` selects the score column; `ltrb_offset` the first of four
/// LTRB columns belonging to the same object.
DecodedBox decode_box(const GridSpec& grid, const Matrix& score, const Matrix& ltrb, int channel = 0,
                      int ltrb_offset = 0);
DecodedBox decode_box(const ScoreMap& score, const LtrbMap& ltrb);

/// Pixel box implied by LTRB distances (already normalised) at a cell centre.
Box box_from_ltrb(double cx, double cy, double l, double t, double r, double b, double diagonal);

/// Axis-aligned affine map x' = scale_x * x + offset_x (same for y). A
/// negative scale mirrors; boxes are re-normalised to positive size.
struct BoxTransform {
    double scale_x = 1.0;
    double scale_y = 1.0;
    double offset_x = 0.0;
    double offset_y = 0.0;

    static BoxTransform scaling(double s) { return {s, s, 0.0, 0.0}; }
    static BoxTransform translation(double dx, double dy) { return {1.0, 1.0, dx, dy}; }
    /// x' = width - x, i.e. a box maps to (width - x - w).
    static BoxTransform mirror_x(double width) { return {-1.0, 1.0, width, 0.0}; }

    [[nodiscard]] Box apply(const Box& b) const;
    [[nodiscard]] MaybeBox apply(const MaybeBox& b) const { return b ? MaybeBox{apply(*b)} : std::nullopt; }
    [[nodiscard]] BoxTransform inverse() const;
    /// `then` applied after *this.
    [[nodiscard]] BoxTransform followed_by(const BoxTransform& then) const;
    bool operator==(const BoxTransform&) const = default;
};

}  // namespace tamos
