#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stawgan/core/tensor.hpp"
#include "stawgan/errors.hpp"
#include "stawgan/image_io.hpp"

namespace stawgan::data {

using core::Rng;
using core::Shape4;
using core::Tensor;

enum class Domain : int { IR = 0, RGB = 1 };

inline Domain other_domain(Domain d) { return d == Domain::IR ? Domain::RGB : Domain::IR; }
inline const char* domain_name(Domain d) { return d == Domain::IR ? "ir" : "rgb"; }

inline constexpr int kNumClasses = 5;  // car, truck, bus, van, freight car

// Storage colors for the class-colored mask (RGB). Metadata only.
inline constexpr std::array<std::array<std::uint8_t, 3>, kNumClasses> kClassColors{{
    {{220, 20, 60}},   // car
    {{0, 160, 60}},    // truck
    {{30, 120, 255}},  // bus
    {{250, 200, 30}},  // van
    {{180, 70, 220}},  // freight car
}};

// Oriented bounding box: center, extent, CCW rotation.
struct OrientedBox {
  double center_x = 0;  // pixels
  double center_y = 0;
  double width = 0;
  double height = 0;
  double angle = 0;  // radians CCW
  int class_id = 0;  // [0, kNumClasses)

  void validate() const {
    if (!(width > 0) || !(height > 0))
      throw InvalidAnnotationError("oriented box with non-positive dimensions " +
                                   std::to_string(width) + "x" + std::to_string(height));
    if (class_id < 0 || class_id >= kNumClasses)
      throw InvalidAnnotationError("class id " + std::to_string(class_id) + " out of range");
  }
};

// Pixel (r,c) is set iff its center (c+0.5, r+0.5) lies inside the rotated
// rectangle. Boxes fully outside the frame yield an all-zero mask.
inline Tensor<float> rasterize_obb(const OrientedBox& box, std::int64_t height,
                                   std::int64_t width) {
  box.validate();
  if (height <= 0 || width <= 0) throw ValidationError("rasterize_obb: non-positive frame");
  Tensor<float> mask(Shape4{1, 1, height, width});
  const double c = std::cos(box.angle), s = std::sin(box.angle);
  const double hw = box.width / 2.0, hh = box.height / 2.0;
  for (std::int64_t r = 0; r < height; ++r) {
    const double py = static_cast<double>(r) + 0.5;
    for (std::int64_t col = 0; col < width; ++col) {
      const double px = static_cast<double>(col) + 0.5;
      const double dx = px - box.center_x, dy = py - box.center_y;
      // rotate into the box frame (by -angle)
      const double rx = c * dx + s * dy;
      const double ry = -s * dx + c * dy;
      if (std::abs(rx) <= hw && std::abs(ry) <= hh) mask.at(0, 0, r, col) = 1.0f;
    }
  }
  return mask;
}

struct MaskSet {
  Tensor<float> target_mask;   // union scaled to [-1,1]
  Tensor<float> foreground;    // b^x, {0,1}
  Tensor<float> target_label;  // y, {0,1}
  ImageU8 class_mask;          // RGB per class color table
};

// Union of per-box masks plus the class-colored storage mask. On overlap the
// later annotation wins in the class mask; the union is unaffected.
inline MaskSet build_masks(const std::vector<OrientedBox>& boxes, std::int64_t height,
                           std::int64_t width) {
  MaskSet out{Tensor<float>(Shape4{1, 1, height, width}, -1.0f),
              Tensor<float>(Shape4{1, 1, height, width}, 0.0f),
              Tensor<float>(Shape4{1, 1, height, width}, 0.0f),
              make_image(static_cast<int>(height), static_cast<int>(width), 3)};
  for (const auto& box : boxes) {
    Tensor<float> m = rasterize_obb(box, height, width);
    const auto& color = kClassColors[static_cast<std::size_t>(box.class_id)];
    for (std::int64_t r = 0; r < height; ++r)
      for (std::int64_t c = 0; c < width; ++c) {
        if (m.at(0, 0, r, c) > 0.5f) {
          out.foreground.at(0, 0, r, c) = 1.0f;
          out.target_label.at(0, 0, r, c) = 1.0f;
          out.target_mask.at(0, 0, r, c) = 1.0f;
          for (int ch = 0; ch < 3; ++ch)
            out.class_mask.at(static_cast<int>(r), static_cast<int>(c), ch) = color[static_cast<std::size_t>(ch)];
        }
      }
  }
  return out;
}

// v in [0,255] -> v/127.5 - 1
inline Tensor<float> normalize(const Tensor<float>& image) {
  Tensor<float> out(image.shape());
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    const float v = image[i];
    if (v < 0.0f || v > 255.0f)
      throw ValidationError("normalize: value " + std::to_string(v) + " outside [0,255]");
    out[i] = v / 127.5f - 1.0f;
  }
  return out;
}

inline Tensor<float> denormalize(const Tensor<float>& image) {
  Tensor<float> out(image.shape());
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    const float v = image[i];
    if (v < -1.0f - 1e-5f || v > 1.0f + 1e-5f)
      throw ValidationError("denormalize: value " + std::to_string(v) + " outside [-1,1]");
    out[i] = (v + 1.0f) * 127.5f;
  }
  return out;
}

// Mean IR intensity on the [0,1] scale; the darkness criterion.
inline double mean_intensity01(const ImageU8& ir) {
  double acc = 0;
  for (std::uint8_t v : ir.pixels) acc += v;
  return ir.pixels.empty() ? 0.0 : acc / (255.0 * static_cast<double>(ir.pixels.size()));
}

// ---- manifests --------------------------------------------------------------

struct ManifestRecord {
  std::string ir_path;
  std::string rgb_path;
  std::string ann_path;
  std::string mask_path;
};

// Line-oriented index over one split. Paths are stored relative to root.
struct DatasetManifest {
  std::string root;
  std::string split;  // "train" or "val"
  bool paired = false;
  std::vector<ManifestRecord> records;

  std::string resolve(const std::string& rel) const {
    return (std::filesystem::path(root) / rel).string();
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& rec : records) {
      for (const std::string& rel : {rec.ir_path, rec.rgb_path, rec.ann_path, rec.mask_path}) {
        if (!std::filesystem::exists(resolve(rel)))
          throw IoError("manifest path not resolvable: " + resolve(rel));
      }
      if (!seen.insert(rec.ir_path).second)
        throw ValidationError("duplicate manifest record: " + rec.ir_path);
    }
  }
};

inline std::string manifest_path(const std::string& root, const std::string& split) {
  return (std::filesystem::path(root) / (split + ".manifest")).string();
}

// Format: header lines "split=..." / "paired=0|1", then one tab-separated
// record per line: ir<TAB>rgb<TAB>ann<TAB>mask (paths relative to root).
inline void save_manifest(const DatasetManifest& m) {
  namespace fs = std::filesystem;
  fs::create_directories(m.root);
  const std::string path = manifest_path(m.root, m.split);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest: " + path);
  os << "# stawgan manifest v1\n";
  os << "split=" << m.split << "\n";
  os << "paired=" << (m.paired ? 1 : 0) << "\n";
  for (const auto& r : m.records)
    os << r.ir_path << "\t" << r.rgb_path << "\t" << r.ann_path << "\t" << r.mask_path << "\n";
}

inline DatasetManifest load_manifest(const std::string& root, const std::string& split) {
  const std::string path = manifest_path(root, split);
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  DatasetManifest m;
  m.root = root;
  m.split = split;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("split=", 0) == 0) {
      m.split = line.substr(6);
      continue;
    }
    if (line.rfind("paired=", 0) == 0) {
      m.paired = line.substr(7) == "1";
      continue;
    }
    ManifestRecord rec;
    std::istringstream ls(line);
    if (!(std::getline(ls, rec.ir_path, '\t') && std::getline(ls, rec.rgb_path, '\t') &&
          std::getline(ls, rec.ann_path, '\t') && std::getline(ls, rec.mask_path)))
      throw IoError("malformed manifest line in " + path + ": " + line);
    m.records.push_back(std::move(rec));
  }
  m.validate();
  return m;
}

// Keeps records whose IR mean intensity is >= threshold. Deterministic, and
// idempotent by construction. Returns the filtered manifest; removed_count
// reports how many records were dropped.
inline DatasetManifest darkness_filter(const DatasetManifest& m, double threshold,
                                       std::size_t* removed_count = nullptr) {
  if (threshold < 0.0 || threshold > 1.0)
    throw ValidationError("darkness threshold must lie in [0,1]");
  DatasetManifest out = m;
  out.records.clear();
  for (const auto& rec : m.records) {
    ImageU8 ir = read_image(m.resolve(rec.ir_path), 1);
    if (mean_intensity01(ir) >= threshold) out.records.push_back(rec);
  }
  if (removed_count) *removed_count = m.records.size() - out.records.size();
  return out;
}

// ---- annotations ------------------------------------------------------------

inline constexpr double kPi = 3.14159265358979323846;

// One box per line: "class cx cy w h angle_deg", whitespace separated.
inline std::vector<OrientedBox> load_annotations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open annotation file: " + path);
  std::vector<OrientedBox> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    OrientedBox b;
    double angle_deg = 0;
    if (!(ls >> b.class_id >> b.center_x >> b.center_y >> b.width >> b.height >> angle_deg))
      throw InvalidAnnotationError("malformed annotation at " + path + ":" +
                                   std::to_string(lineno));
    b.angle = angle_deg * kPi / 180.0;
    b.validate();
    boxes.push_back(b);
  }
  return boxes;
}

inline void save_annotations(const std::string& path, const std::vector<OrientedBox>& boxes) {
  namespace fs = std::filesystem;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write annotation file: " + path);
  for (const auto& b : boxes) {
    os << b.class_id << " " << b.center_x << " " << b.center_y << " " << b.width << " "
       << b.height << " " << b.angle * 180.0 / kPi << "\n";
  }
}

// ---- samples ----------------------------------------------------------------

// One training record, fully decoded and normalized.
struct ImageSample {
  Tensor<float> image;                        // [1,C,H,W] in [-1,1]; C=3 RGB, C=1 IR
  std::optional<Tensor<float>> paired_image;  // same scene, other domain
  Tensor<float> target_mask;                  // r_s, [1,1,H,W] in [-1,1]
  Tensor<float> foreground;                   // b^x, {0,1}
  Tensor<float> target_label;                 // y, {0,1}
  ImageU8 class_mask;                         // storage only
  Domain domain = Domain::IR;
};

struct LoadOptions {
  int image_size = 256;  // square resize target
  Domain source = Domain::IR;
};

namespace detail {

inline Tensor<float> binarize_mask_u8(const ImageU8& mask) {
  Tensor<float> t(Shape4{1, 1, mask.height, mask.width});
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      t.at(0, 0, y, x) = mask.at(y, x, 0) > 127 ? 1.0f : 0.0f;
  return t;
}

}  // namespace detail

// Decode one record: bilinear-resized, normalized images; nearest-resized,
// re-binarized masks. The source domain picks which modality becomes
// `image`; the other modality is attached only for paired manifests.
inline ImageSample load_pair(const DatasetManifest& m, std::size_t index,
                             const LoadOptions& opts = {}) {
  if (index >= m.records.size())
    throw ValidationError("load_pair: index " + std::to_string(index) + " out of range");
  const auto& rec = m.records[index];
  ImageU8 ir = read_image(m.resolve(rec.ir_path), 1);
  ImageU8 rgb = read_image(m.resolve(rec.rgb_path));
  ImageU8 mask = read_image(m.resolve(rec.mask_path), 1);
  if (ir.height != rgb.height || ir.width != rgb.width)
    throw InvalidAnnotationError("IR/RGB frame mismatch for " + m.resolve(rec.ir_path));
  if (mask.height != ir.height || mask.width != ir.width)
    throw InvalidAnnotationError("mask frame mismatch for " + m.resolve(rec.mask_path));

  const int S = opts.image_size;
  ir = resize_bilinear(ir, S, S);
  rgb = resize_bilinear(rgb, S, S);
  mask = resize_nearest(mask, S, S);

  ImageU8 class_mask;
  // Class mask is optional storage; reuse the binary mask path with suffix.
  const std::string cls_path = m.resolve(rec.mask_path) + ".class.png";
  if (std::filesystem::exists(cls_path))
    class_mask = resize_nearest(read_image(cls_path), S, S);
  else
    class_mask = make_image(S, S, 3);

  ImageSample sample;
  sample.domain = opts.source;
  Tensor<float> ir_t = normalize(to_tensor_raw(ir));
  Tensor<float> rgb_t = normalize(to_tensor_raw(rgb));
  if (opts.source == Domain::IR) {
    sample.image = std::move(ir_t);
    if (m.paired) sample.paired_image = std::move(rgb_t);
  } else {
    sample.image = std::move(rgb_t);
    if (m.paired) sample.paired_image = std::move(ir_t);
  }
  Tensor<float> fg = detail::binarize_mask_u8(mask);
  sample.target_label = fg;
  sample.target_mask = Tensor<float>(fg.shape());
  for (std::int64_t i = 0; i < fg.numel(); ++i)
    sample.target_mask[i] = fg[i] * 2.0f - 1.0f;
  sample.foreground = std::move(fg);
  sample.class_mask = std::move(class_mask);
  return sample;
}

// ---- synthetic toy dataset ---------------------------------------------------

// The deterministic RGB->IR transform of the toy world: saturated (vehicle)
// pixels run hot, bright backgrounds run cooler. Pure function of one RGB
// pixel, computed on quantized 8-bit values.
inline std::uint8_t toy_ir_from_rgb(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
  const int mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double sat = static_cast<double>(mx - mn);
  const double ir = 38.0 + 0.62 * sat + 0.30 * (255.0 - luma);
  return static_cast<std::uint8_t>(std::llround(std::min(std::max(ir, 0.0), 255.0)));
}

inline ImageU8 toy_ir_image(const ImageU8& rgb) {
  ImageU8 ir = make_image(rgb.height, rgb.width, 1);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      ir.at(y, x, 0) = toy_ir_from_rgb(rgb.at(y, x, 0), rgb.at(y, x, 1), rgb.at(y, x, 2));
  return ir;
}

struct ToyDataset {
  DatasetManifest train;
  DatasetManifest val;
};

namespace detail {

inline ImageU8 toy_rgb_scene(int size, Rng& rng, std::vector<OrientedBox>& boxes_out) {
  ImageU8 rgb = make_image(size, size, 3);
  // textured background: soft gray with two sinusoidal waves, low saturation
  const double base = rng.uniform(0.38, 0.58);
  const double a1 = rng.uniform(0.03, 0.09), a2 = rng.uniform(0.02, 0.06);
  const double k1x = rng.uniform(0.5, 2.5), k1y = rng.uniform(0.5, 2.5);
  const double k2x = rng.uniform(2.0, 5.0), k2y = rng.uniform(2.0, 5.0);
  const double p1 = rng.uniform(0.0, 2.0 * kPi), p2 = rng.uniform(0.0, 2.0 * kPi);
  std::array<double, 3> tint{rng.uniform(0.93, 1.0), rng.uniform(0.93, 1.0),
                             rng.uniform(0.93, 1.0)};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = static_cast<double>(x) / size, v = static_cast<double>(y) / size;
      double g = base + a1 * std::sin(2.0 * kPi * (k1x * u + k1y * v) + p1) +
                 a2 * std::sin(2.0 * kPi * (k2x * u - k2y * v) + p2);
      g = std::min(std::max(g, 0.05), 0.92);
      for (int c = 0; c < 3; ++c)
        rgb.at(y, x, c) = static_cast<std::uint8_t>(std::llround(255.0 * g * tint[static_cast<std::size_t>(c)]));
    }

  // 1..4 vehicles: saturated rotated rectangles colored by class
  const int n_boxes = 1 + static_cast<int>(rng.uniform_int(4));
  for (int i = 0; i < n_boxes; ++i) {
    OrientedBox box;
    box.class_id = static_cast<int>(rng.uniform_int(kNumClasses));
    box.center_x = rng.uniform(0.2, 0.8) * size;
    box.center_y = rng.uniform(0.2, 0.8) * size;
    box.width = rng.uniform(0.14, 0.30) * size;
    box.height = rng.uniform(0.09, 0.20) * size;
    box.angle = rng.uniform(0.0, kPi);
    boxes_out.push_back(box);

    const auto& color = kClassColors[static_cast<std::size_t>(box.class_id)];
    const double shade = rng.uniform(0.85, 1.0);
    Tensor<float> m = rasterize_obb(box, size, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (m.at(0, 0, y, x) > 0.5f)
          for (int c = 0; c < 3; ++c)
            rgb.at(y, x, c) =
                static_cast<std::uint8_t>(std::llround(shade * color[static_cast<std::size_t>(c)]));
  }
  return rgb;
}

inline void write_toy_sample(const std::string& root, const std::string& split, int index,
                             int size, std::uint64_t seed, ManifestRecord& rec) {
  namespace fs = std::filesystem;
  Rng rng(core::Rng::derive(seed, static_cast<std::uint64_t>(index) + 101));
  std::vector<OrientedBox> boxes;
  ImageU8 rgb = toy_rgb_scene(size, rng, boxes);
  ImageU8 ir = toy_ir_image(rgb);
  MaskSet masks = build_masks(boxes, size, size);

  char stem[16];
  std::snprintf(stem, sizeof(stem), "%05d", index);
  rec.ir_path = split + "/ir/" + stem + ".png";
  rec.rgb_path = split + "/rgb/" + stem + ".png";
  rec.ann_path = split + "/ann/" + stem + ".txt";
  rec.mask_path = split + "/mask/" + stem + ".png";

  write_image((fs::path(root) / rec.ir_path).string(), ir);
  write_image((fs::path(root) / rec.rgb_path).string(), rgb);
  save_annotations((fs::path(root) / rec.ann_path).string(), boxes);
  ImageU8 bin = make_image(size, size, 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      bin.at(y, x, 0) = masks.foreground.at(0, 0, y, x) > 0.5f ? 255 : 0;
  write_image((fs::path(root) / rec.mask_path).string(), bin);
  write_image((fs::path(root) / rec.mask_path).string() + ".class.png", masks.class_mask);
}

}  // namespace detail

// Deterministic paired toy dataset: n samples split 90/10 into train/val,
// written under root/{train,val}/{ir,rgb,ann,mask}.
inline ToyDataset make_toy_dataset(const std::string& root, int n_samples, int size,
                                   std::uint64_t seed) {
  if (n_samples < 1) throw ValidationError("make_toy_dataset: n_samples must be >= 1");
  if (size < 32) throw ValidationError("make_toy_dataset: size must be >= 32");
  const int n_val = n_samples / 10;
  const int n_train = n_samples - n_val;

  ToyDataset ds;
  ds.train.root = root;
  ds.train.split = "train";
  ds.train.paired = true;
  ds.val.root = root;
  ds.val.split = "val";
  ds.val.paired = true;
  for (int i = 0; i < n_samples; ++i) {
    const bool is_train = i < n_train;
    ManifestRecord rec;
    detail::write_toy_sample(root, is_train ? "train" : "val", i, size, seed, rec);
    (is_train ? ds.train : ds.val).records.push_back(rec);
  }
  save_manifest(ds.train);
  save_manifest(ds.val);
  return ds;
}

}  // namespace stawgan::data
