#include "vlp/regions.hpp"

#include <algorithm>
#include <string>

#include "vlp/errors.hpp"

namespace vlp {

namespace {

std::string box_str(const Box& b) {
  return "(" + std::to_string(b.x1) + "," + std::to_string(b.y1) + "," + std::to_string(b.x2) +
         "," + std::to_string(b.y2) + ")";
}

}  // namespace

void RegionSet::validate(int num_object_classes) const {
  const int n = count();
  if (n < 1) throw ValueError("region set must contain at least one region");
  if (features.rank() != 2 || features.rows() != n)
    throw ShapeError("region features " + features.shape_str() + " do not match " +
                     std::to_string(n) + " boxes");
  if (static_cast<int>(label_ids.size()) != n || static_cast<int>(scores.size()) != n)
    throw ShapeError("region labels/scores do not match box count");
  if (width <= 0 || height <= 0) throw ValueError("image size must be positive");
  for (const Box& b : boxes) {
    if (!(b.x1 >= 0 && b.x1 < b.x2 && b.x2 <= width && b.y1 >= 0 && b.y1 < b.y2 &&
          b.y2 <= height))
      throw ValueError("box " + box_str(b) + " violates image bounds " + std::to_string(width) +
                       "x" + std::to_string(height));
  }
  for (int label : label_ids)
    if (label < 0 || label >= num_object_classes)
      throw ValueError("region label " + std::to_string(label) + " outside [0," +
                       std::to_string(num_object_classes) + ")");
}

RegionSet RegionSet::take_first(int n) const {
  if (n >= count()) return *this;
  RegionSet out;
  out.width = width;
  out.height = height;
  const int64_t d = features.cols();
  out.features = TensorF::zeros({n, d});
  std::copy_n(features.data.begin(), static_cast<size_t>(n * d), out.features.data.begin());
  out.boxes.assign(boxes.begin(), boxes.begin() + n);
  out.label_ids.assign(label_ids.begin(), label_ids.begin() + n);
  out.scores.assign(scores.begin(), scores.begin() + n);
  return out;
}

RegionSet RegionSet::take_rows(const std::vector<int>& rows) const {
  RegionSet out;
  out.width = width;
  out.height = height;
  const int64_t d = features.cols();
  out.features = TensorF::zeros({static_cast<int64_t>(rows.size()), d});
  for (size_t r = 0; r < rows.size(); ++r) {
    const int src = rows[r];
    if (src < 0 || src >= count())
      throw IndexError("region row " + std::to_string(src) + " outside [0," +
                       std::to_string(count()) + ")");
    for (int64_t j = 0; j < d; ++j)
      out.features.at(static_cast<int64_t>(r), j) = features.at(src, j);
    out.boxes.push_back(boxes[static_cast<size_t>(src)]);
    out.label_ids.push_back(label_ids[static_cast<size_t>(src)]);
    out.scores.push_back(scores[static_cast<size_t>(src)]);
  }
  return out;
}

std::array<double, 5> location_vector(const Box& box, double width, double height) {
  if (width <= 0 || height <= 0) throw ValueError("image size must be positive");
  if (box.x2 <= box.x1 || box.y2 <= box.y1)
    throw ValueError("degenerate box " + box_str(box) + ": zero or negative area");
  if (box.x1 < 0 || box.y1 < 0 || box.x2 > width || box.y2 > height)
    throw ValueError("box " + box_str(box) + " outside image " + std::to_string(width) + "x" +
                     std::to_string(height));
  const double nx1 = box.x1 / width;
  const double ny1 = box.y1 / height;
  const double nx2 = box.x2 / width;
  const double ny2 = box.y2 / height;
  return {nx1, ny1, nx2, ny2, (nx2 - nx1) * (ny2 - ny1)};
}

TensorF location_matrix(const RegionSet& regions) {
  const int n = regions.count();
  TensorF out = TensorF::zeros({n, 5});
  for (int i = 0; i < n; ++i) {
    const auto v = location_vector(regions.boxes[static_cast<size_t>(i)], regions.width,
                                   regions.height);
    for (int j = 0; j < 5; ++j) out.at(i, j) = static_cast<float>(v[static_cast<size_t>(j)]);
  }
  return out;
}

double iou(const Box& a, const Box& b) {
  for (const Box* box : {&a, &b})
    if (!(box->x2 > box->x1) || !(box->y2 > box->y1))
      throw ValueError("iou requires boxes with positive area");
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

}  // namespace vlp
