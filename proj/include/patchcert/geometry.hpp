#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace patchcert {

// Grid coordinate, row-major. Lexicographic order is (row, then col).
struct Coord {
    int row = 0;
    int col = 0;
    auto operator<=>(const Coord&) const = default;
};

// Axis-aligned rectangle over pixel/grid coordinates, inclusive extents.
struct Rect {
    int x0 = 0;  // left column
    int y0 = 0;  // top row
    int x1 = -1; // right column, inclusive
    int y1 = -1; // bottom row, inclusive

    static Rect from_size(int x, int y, int w, int h) { return Rect{x, y, x + w - 1, y + h - 1}; }

    bool empty() const { return x1 < x0 || y1 < y0; }
    int width() const { return empty() ? 0 : x1 - x0 + 1; }
    int height() const { return empty() ? 0 : y1 - y0 + 1; }
    long long area() const { return static_cast<long long>(width()) * height(); }

    bool contains(int col, int row) const {
        return col >= x0 && col <= x1 && row >= y0 && row <= y1;
    }
    bool contains(const Rect& o) const {
        return !o.empty() && o.x0 >= x0 && o.x1 <= x1 && o.y0 >= y0 && o.y1 <= y1;
    }
    bool intersects(const Rect& o) const {
        return !empty() && !o.empty() && x0 <= o.x1 && o.x0 <= x1 && y0 <= o.y1 && o.y0 <= y1;
    }
    Rect intersect(const Rect& o) const {
        Rect r{std::max(x0, o.x0), std::max(y0, o.y0), std::min(x1, o.x1), std::min(y1, o.y1)};
        return r;
    }
    Rect bounding(const Rect& o) const {
        if (empty()) return o;
        if (o.empty()) return *this;
        return Rect{std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
    }
    Rect clipped(int width_limit, int height_limit) const {
        return intersect(Rect{0, 0, width_limit - 1, height_limit - 1});
    }
    Rect expanded(int margin) const {
        return Rect{x0 - margin, y0 - margin, x1 + margin, y1 + margin};
    }

    bool operator==(const Rect&) const = default;

    std::string to_string() const {
        return "[" + std::to_string(x0) + "," + std::to_string(y0) + "," + std::to_string(x1) +
               "," + std::to_string(y1) + "]";
    }
};

// Square sliding occluder, side `side`, top-left (x, y).
struct Window {
    int x = 0;
    int y = 0;
    int side = 1;

    Rect rect() const { return Rect::from_size(x, y, side, side); }
    bool operator==(const Window&) const = default;
};

// Binary grid over a 2-D extent.
struct BitGrid {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> cells;

    BitGrid() = default;
    BitGrid(int h, int w) : height(h), width(w), cells(static_cast<std::size_t>(h) * w, 0) {}

    bool test(int row, int col) const { return cells[static_cast<std::size_t>(row) * width + col] != 0; }
    void set(int row, int col, bool v = true) {
        cells[static_cast<std::size_t>(row) * width + col] = v ? 1 : 0;
    }
    void set_rect(const Rect& r) {
        Rect c = r.clipped(width, height);
        for (int row = c.y0; row <= c.y1; ++row)
            for (int col = c.x0; col <= c.x1; ++col) set(row, col);
    }
    int popcount() const {
        int n = 0;
        for (auto v : cells) n += v;
        return n;
    }
    bool any_in(const Rect& r) const {
        Rect c = r.clipped(width, height);
        for (int row = c.y0; row <= c.y1; ++row)
            for (int col = c.x0; col <= c.x1; ++col)
                if (test(row, col)) return true;
        return false;
    }
    bool operator==(const BitGrid&) const = default;
};

}  // namespace patchcert
