#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nndm::plot {

using Rgb = std::array<std::uint8_t, 3>;

struct Series {
    std::vector<double> x;
    std::vector<double> y;  // NaN entries break the line
    Rgb color{31, 119, 180};
};

/// RGB canvas with a tiny digit font for axis limits.
class Canvas {
public:
    Canvas(int width, int height);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    void set(int x, int y, Rgb c);
    Rgb get(int x, int y) const;
    void line(int x0, int y0, int x1, int y1, Rgb c, int thickness = 1);
    void text(int x, int y, const std::string& s, Rgb c);

    void write_png(const std::filesystem::path& path) const;

private:
    int width_;
    int height_;
    std::vector<std::uint8_t> pixels_;
};

/// Line chart of every series over shared axes.
void line_plot(const std::filesystem::path& path, const std::vector<Series>& series, int width = 640,
               int height = 400);

/// Scatter of (x, y) pairs on equal axes with the y = x diagonal.
void scatter_plot(const std::filesystem::path& path, const std::vector<double>& x,
                  const std::vector<double>& y, int size = 480);

}  // namespace nndm::plot
