#pragma once

#include <vector>

#include "patchcert/errors.hpp"
#include "patchcert/geometry.hpp"

namespace patchcert {

// Square patch threat description. Location is set for attacks, absent (-1)
// when only the size matters for defense planning.
struct PatchSpec {
    int side = 3;
    int x = -1;
    int y = -1;

    bool located() const { return x >= 0 && y >= 0; }
    Rect rect() const { return Rect::from_size(x, y, side, side); }
};

// Occluder side so that r*r stride-1 windows fully cover an interior patch.
inline int occluder_side(int patch_side, int redundancy) {
    if (patch_side < 1 || redundancy < 1) throw ConfigError("patch side and redundancy must be >= 1");
    return patch_side + redundancy - 1;
}

// Every in-bounds window of side p+r-1 at stride 1, row-major.
inline std::vector<Window> generate_windows(int image_h, int image_w, int patch_side,
                                            int redundancy) {
    const int side = occluder_side(patch_side, redundancy);
    if (side > image_h || side > image_w)
        throw ConfigError("occluder side " + std::to_string(side) + " exceeds image " +
                          std::to_string(image_h) + "x" + std::to_string(image_w));
    std::vector<Window> out;
    out.reserve(static_cast<std::size_t>(image_h - side + 1) * (image_w - side + 1));
    for (int y = 0; y + side <= image_h; ++y)
        for (int x = 0; x + side <= image_w; ++x) out.push_back(Window{x, y, side});
    return out;
}

// Windows whose rectangle touches at least one set pixel of the region,
// original order preserved.
inline std::vector<Window> filter_windows(const std::vector<Window>& windows,
                                          const BitGrid& region) {
    std::vector<Window> out;
    for (const Window& w : windows)
        if (region.any_in(w.rect())) out.push_back(w);
    return out;
}

inline std::vector<int> filter_rect_indices(const std::vector<Rect>& rects, const BitGrid& region) {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(rects.size()); ++i)
        if (region.any_in(rects[i])) out.push_back(i);
    return out;
}

struct WindowPlan {
    std::vector<Window> kept;
    std::vector<Rect> merged;    // bounding boxes; may be non-square
    std::vector<int> cover_map;  // kept[i] is contained in merged[cover_map[i]]
};

inline double overlap_ratio(const Rect& a, const Rect& b) {
    if (!a.intersects(b)) return 0.0;
    const double inter = static_cast<double>(a.intersect(b).area());
    return inter / static_cast<double>(std::min(a.area(), b.area()));
}

// Greedy fixed-point merge: repeatedly replace the first pair with overlap
// ratio >= threshold by its bounding box. Coverage is preserved (every input
// window ends up inside exactly one output rectangle). `max_side`, when
// positive, rejects merges whose bounding box would exceed it on either axis;
// it keeps desk-sized plans from collapsing into one full-image occluder.
inline WindowPlan merge_windows(const std::vector<Window>& windows, double overlap_threshold,
                                int max_side = 0) {
    if (!(overlap_threshold >= 0.0 && overlap_threshold <= 1.0))
        throw ConfigError("overlap threshold must lie in [0,1]");
    WindowPlan plan;
    plan.kept = windows;
    plan.merged.reserve(windows.size());
    plan.cover_map.resize(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        plan.merged.push_back(windows[i].rect());
        plan.cover_map[i] = static_cast<int>(i);
    }

    bool merged_any = true;
    while (merged_any) {
        merged_any = false;
        const int n = static_cast<int>(plan.merged.size());
        for (int i = 0; i < n && !merged_any; ++i) {
            for (int j = i + 1; j < n; ++j) {
                const Rect& a = plan.merged[i];
                const Rect& b = plan.merged[j];
                if (overlap_ratio(a, b) < overlap_threshold) continue;
                Rect box = a.bounding(b);
                if (max_side > 0 && (box.width() > max_side || box.height() > max_side)) continue;
                plan.merged[i] = box;
                plan.merged.erase(plan.merged.begin() + j);
                for (int& m : plan.cover_map) {
                    if (m == j) m = i;
                    else if (m > j) --m;
                }
                merged_any = true;
                break;
            }
        }
    }
    return plan;
}

// The image-independent occluder plan: all windows merged once. Per image the
// defense evaluates the merged rectangles that touch the candidate region.
inline WindowPlan build_window_plan(int image_h, int image_w, int patch_side, int redundancy,
                                    double overlap_threshold, int max_side = 0) {
    return merge_windows(generate_windows(image_h, image_w, patch_side, redundancy),
                         overlap_threshold, max_side);
}

}  // namespace patchcert
