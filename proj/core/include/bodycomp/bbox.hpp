#pragma once

namespace bodycomp {

// Axis-aligned pixel box, top-left anchored.
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool operator==(const BBox&) const = default;

  bool inside(int img_w, int img_h) const {
    return x >= 0 && y >= 0 && w >= 1 && h >= 1 && x + w <= img_w &&
           y + h <= img_h;
  }
};

}  // namespace bodycomp
