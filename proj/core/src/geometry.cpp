#include "tamos/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tamos {

bool Box::valid() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) && w > 0.0 && h > 0.0;
}

GridSpec GridSpec::for_image(int image_height, int image_width, int stride) {
    if (stride <= 0 || image_height <= 0 || image_width <= 0) {
        throw std::invalid_argument("GridSpec: image size and stride must be positive");
    }
    return GridSpec{(image_height + stride - 1) / stride, (image_width + stride - 1) / stride, stride,
                    image_height, image_width};
}

double GridSpec::diagonal() const {
    return std::hypot(static_cast<double>(image_height), static_cast<double>(image_width));
}

GridSpec GridSpec::doubled() const {
    if (stride % 2 != 0) throw std::invalid_argument("GridSpec::doubled: odd stride");
    return GridSpec{2 * height_cells, 2 * width_cells, stride / 2, image_height, image_width};
}

double iou(const Box& a, const Box& b) {
    // (x + w) - x need not round back to w, which would keep a perfect
    // prediction just below overlap 1.
    if (a == b) return a.area() > 0.0 ? 1.0 : 0.0;
    const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    const double inter = std::max(0.0, iw) * std::max(0.0, ih);
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
    if (!(a.area() > 0.0) || !(b.area() > 0.0)) throw std::invalid_argument("giou: zero-area box");
    if (a == b) return 1.0;
    const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    const double inter = std::max(0.0, iw) * std::max(0.0, ih);
    const double uni = a.area() + b.area() - inter;
    const double hull = (std::max(a.right(), b.right()) - std::min(a.x, b.x)) *
                        (std::max(a.bottom(), b.bottom()) - std::min(a.y, b.y));
    return inter / uni - (hull - uni) / hull;
}

ScoreMap gaussian_map(const MaybeBox& box, const GridSpec& grid, double sigma_cells) {
    if (!(sigma_cells > 0.0)) throw std::invalid_argument("gaussian_map: sigma must be positive");
    ScoreMap out{grid, Matrix::Zero(grid.cells(), 1)};
    if (!box) return out;
    const double cx = box->center_x() / grid.stride - 0.5;
    const double cy = box->center_y() / grid.stride - 0.5;
    const double denom = 2.0 * sigma_cells * sigma_cells;
    for (int r = 0; r < grid.height_cells; ++r) {
        for (int c = 0; c < grid.width_cells; ++c) {
            const double d2 = (c - cx) * (c - cx) + (r - cy) * (r - cy);
            out.values(static_cast<Eigen::Index>(r) * grid.width_cells + c, 0) = std::exp(-d2 / denom);
        }
    }
    const double peak = out.values.maxCoeff();
    if (peak > 0.0) out.values /= peak;
    return out;
}

LtrbMap ltrb_map(const Box& box, const GridSpec& grid) {
    LtrbMap out{grid, Matrix::Zero(grid.cells(), 4)};
    const double diag = grid.diagonal();
    for (int r = 0; r < grid.height_cells; ++r) {
        const double cy = grid.cell_center_y(r);
        for (int c = 0; c < grid.width_cells; ++c) {
            const double cx = grid.cell_center_x(c);
            const Eigen::Index i = static_cast<Eigen::Index>(r) * grid.width_cells + c;
            out.values(i, 0) = std::max(0.0, cx - box.x) / diag;
            out.values(i, 1) = std::max(0.0, cy - box.y) / diag;
            out.values(i, 2) = std::max(0.0, box.right() - cx) / diag;
            out.values(i, 3) = std::max(0.0, box.bottom() - cy) / diag;
        }
    }
    return out;
}

Box box_from_ltrb(double cx, double cy, double l, double t, double r, double b, double diagonal) {
    return Box{cx - l * diagonal, cy - t * diagonal, (l + r) * diagonal, (t + b) * diagonal};
}

DecodedBox decode_box(const GridSpec& grid, const Matrix& score, const Matrix& ltrb, int channel, int ltrb_offset) {
    if (score.rows() != grid.cells() || ltrb.rows() != grid.cells()) {
        throw std::invalid_argument("decode_box: maps do not match the grid");
    }
    Eigen::Index best = 0;
    double best_value = score(0, channel);
    for (Eigen::Index i = 1; i < score.rows(); ++i) {
        if (score(i, channel) > best_value) {
            best_value = score(i, channel);
            best = i;
        }
    }
    const int row = static_cast<int>(best / grid.width_cells);
    const int col = static_cast<int>(best % grid.width_cells);
    DecodedBox out;
    out.cell = static_cast<int>(best);
    out.presence = best_value;
    out.box = box_from_ltrb(grid.cell_center_x(col), grid.cell_center_y(row), ltrb(best, ltrb_offset),
                            ltrb(best, ltrb_offset + 1), ltrb(best, ltrb_offset + 2), ltrb(best, ltrb_offset + 3),
                            grid.diagonal());
    // Keep the reported box valid; a collapsed regression is flagged instead.
    constexpr double kMinSide = 1e-3;
    const bool degenerate = !(out.box.w > kMinSide) || !(out.box.h > kMinSide);
    if (degenerate) {
        out.box.w = std::max(out.box.w, kMinSide);
        out.box.h = std::max(out.box.h, kMinSide);
    }
    out.low_confidence = degenerate || !(best_value > 0.0);
    return out;
}

DecodedBox decode_box(const ScoreMap& score, const LtrbMap& ltrb) {
    if (!(score.grid == ltrb.grid)) throw std::invalid_argument("decode_box: grids differ");
    return decode_box(score.grid, score.values, ltrb.values, 0, 0);
}

Box BoxTransform::apply(const Box& b) const {
    // Sizes scale directly; going through the far corner would lose the
    // last bits of w and h even for the identity.
    const double x = scale_x >= 0.0 ? scale_x * b.x + offset_x : scale_x * b.right() + offset_x;
    const double y = scale_y >= 0.0 ? scale_y * b.y + offset_y : scale_y * b.bottom() + offset_y;
    return {x, y, std::abs(scale_x) * b.w, std::abs(scale_y) * b.h};
}

BoxTransform BoxTransform::inverse() const {
    if (scale_x == 0.0 || scale_y == 0.0) throw std::invalid_argument("BoxTransform: singular transform");
    return {1.0 / scale_x, 1.0 / scale_y, -offset_x / scale_x, -offset_y / scale_y};
}

BoxTransform BoxTransform::followed_by(const BoxTransform& then) const {
    return {then.scale_x * scale_x, then.scale_y * scale_y, then.scale_x * offset_x + then.offset_x,
            then.scale_y * offset_y + then.offset_y};
}

}  // namespace tamos
