#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "vlp/tensor.hpp"

namespace vlp {

// Pixel-space box, bottom-left and top-right corners.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double area() const { return (x2 - x1) * (y2 - y1); }
};

// Detector output for one image: one feature row, box, class and score
// per region.
struct RegionSet {
  TensorF features;  // [I, d_vis]
  std::vector<Box> boxes;
  std::vector<int> label_ids;
  std::vector<float> scores;
  double width = 0, height = 0;

  int count() const { return static_cast<int>(boxes.size()); }

  // Checks row counts agree, boxes sit inside the image, labels in [0,K).
  void validate(int num_object_classes) const;

  RegionSet take_first(int n) const;

  // Row-gather copy; rows may repeat.
  RegionSet take_rows(const std::vector<int>& rows) const;
};

// (x1/W, y1/H, x2/W, y2/H, area/(W*H)); components in [0,1], last in (0,1].
std::array<double, 5> location_vector(const Box& box, double width, double height);

// Stacked location vectors, [I,5].
TensorF location_matrix(const RegionSet& regions);

// Intersection over union; 0 for disjoint boxes.
double iou(const Box& a, const Box& b);

}  // namespace vlp
