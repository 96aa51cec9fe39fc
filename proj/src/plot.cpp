#include "nndm/plot.hpp"

#include "nndm/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace nndm::plot {

namespace {

// 3x5 glyphs, one row per entry, bit 2 = leftmost column.
struct Glyph {
    char c;
    std::uint8_t rows[5];
};

constexpr Glyph kGlyphs[] = {
    {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
    {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}},
    {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'.', {0, 0, 0, 0, 2}}, {'-', {0, 0, 7, 0, 0}},
    {'e', {0, 7, 7, 4, 7}}, {'+', {0, 2, 7, 2, 0}},
};

constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kGrey{200, 200, 200};

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

struct Frame {
    int left = 60;
    int right = 20;
    int top = 20;
    int bottom = 40;
    double x_lo, x_hi, y_lo, y_hi;
    int w, h;

    int px(double x) const {
        return left + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (w - left - right)));
    }
    int py(double y) const {
        return h - bottom - static_cast<int>(std::lround((y - y_lo) / (y_hi - y_lo) * (h - top - bottom)));
    }
};

void widen(double& lo, double& hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
}

void draw_axes(Canvas& canvas, const Frame& f) {
    const int x0 = f.left, x1 = f.w - f.right, y0 = f.h - f.bottom, y1 = f.top;
    for (int k = 1; k < 4; ++k) {
        const int gx = x0 + (x1 - x0) * k / 4;
        const int gy = y0 + (y1 - y0) * k / 4;
        canvas.line(gx, y0, gx, y1, kGrey);
        canvas.line(x0, gy, x1, gy, kGrey);
    }
    canvas.line(x0, y0, x1, y0, kBlack);
    canvas.line(x0, y0, x0, y1, kBlack);
    canvas.text(x0, y0 + 8, tick_label(f.x_lo), kBlack);
    const std::string xr = tick_label(f.x_hi);
    canvas.text(x1 - 8 * static_cast<int>(xr.size()), y0 + 8, xr, kBlack);
    const std::string yl = tick_label(f.y_lo);
    const std::string yh = tick_label(f.y_hi);
    canvas.text(x0 - 4 - 8 * static_cast<int>(yl.size()), y0 - 10, yl, kBlack);
    canvas.text(x0 - 4 - 8 * static_cast<int>(yh.size()), y1, yh, kBlack);
}

}  // namespace

Canvas::Canvas(int width, int height) : width_(width), height_(height) {
    if (width < 16 || height < 16) {
        throw ConfigError("plot canvas must be at least 16x16");
    }
    pixels_.assign(static_cast<std::size_t>(width) * height * 3, 255);
}

void Canvas::set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) {
        return;
    }
    const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    pixels_[i] = c[0];
    pixels_[i + 1] = c[1];
    pixels_[i + 2] = c[2];
}

Rgb Canvas::get(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c, int thickness) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    const int r0 = -(thickness - 1) / 2, r1 = thickness / 2;
    while (true) {
        for (int oy = r0; oy <= r1; ++oy)
            for (int ox = r0; ox <= r1; ++ox) set(x0 + ox, y0 + oy, c);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

// Glyphs are drawn at 2x scale; each character advances 8 pixels.
void Canvas::text(int x, int y, const std::string& s, Rgb c) {
    for (char ch : s) {
        for (const Glyph& g : kGlyphs) {
            if (g.c != ch) continue;
            for (int r = 0; r < 5; ++r)
                for (int col = 0; col < 3; ++col)
                    if (g.rows[r] & (4 >> col))
                        for (int k = 0; k < 4; ++k) set(x + 2 * col + k % 2, y + 2 * r + k / 2, c);
        }
        x += 8;
    }
}

void Canvas::write_png(const std::filesystem::path& path) const {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!file) {
        throw DataError("cannot open " + path.string() + " for writing");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width_), static_cast<png_uint_32>(height_), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height_; ++y) {
        png_write_row(png, const_cast<png_bytep>(pixels_.data() + static_cast<std::size_t>(y) * width_ * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void line_plot(const std::filesystem::path& path, const std::vector<Series>& series, int width, int height) {
    Frame f{};
    f.w = width;
    f.h = height;
    f.x_lo = f.y_lo = INFINITY;
    f.x_hi = f.y_hi = -INFINITY;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) {
            throw ConfigError("line plot series has mismatched x and y lengths");
        }
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            f.x_lo = std::min(f.x_lo, s.x[i]);
            f.x_hi = std::max(f.x_hi, s.x[i]);
            f.y_lo = std::min(f.y_lo, s.y[i]);
            f.y_hi = std::max(f.y_hi, s.y[i]);
        }
    }
    widen(f.x_lo, f.x_hi);
    widen(f.y_lo, f.y_hi);
    Canvas canvas(width, height);
    draw_axes(canvas, f);
    for (const auto& s : series) {
        bool have_prev = false;
        int prev_x = 0, prev_y = 0;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) {
                have_prev = false;
                continue;
            }
            const int x = f.px(s.x[i]), y = f.py(s.y[i]);
            if (have_prev) {
                canvas.line(prev_x, prev_y, x, y, s.color, 2);
            } else {
                canvas.line(x, y, x, y, s.color, 3);
            }
            prev_x = x;
            prev_y = y;
            have_prev = true;
        }
    }
    canvas.write_png(path);
}

void scatter_plot(const std::filesystem::path& path, const std::vector<double>& x,
                  const std::vector<double>& y, int size) {
    if (x.size() != y.size()) {
        throw ConfigError("scatter plot needs equally many x and y values");
    }
    Frame f{};
    f.w = f.h = size;
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
        lo = std::min({lo, x[i], y[i]});
        hi = std::max({hi, x[i], y[i]});
    }
    widen(lo, hi);
    f.x_lo = f.y_lo = lo;
    f.x_hi = f.y_hi = hi;
    Canvas canvas(size, size);
    draw_axes(canvas, f);
    canvas.line(f.px(lo), f.py(lo), f.px(hi), f.py(hi), {150, 150, 150});
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
        const int px = f.px(x[i]), py = f.py(y[i]);
        canvas.line(px, py, px, py, {214, 39, 40}, 5);
    }
    canvas.write_png(path);
}

}  // namespace nndm::plot
