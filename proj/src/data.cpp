// SPDX-License-Identifier: Apache-2.0
#include "qwid/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include "qwid/random.hpp"

namespace qwid {

namespace fs = std::filesystem;

const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {"Chinese apple", "Lantana",     "Parkinsonia", "Parthenium", "Prickly acacia",
                                                 "Rubber vine",   "Siam weed",   "Snake weed",  "Negative"};
  return names;
}

void Dataset::validate() const {
  if (images.size() != labels.size()) throw DatasetError("dataset: image and label counts differ");
  for (int l : labels) {
    if (l < 0 || l >= static_cast<int>(class_names.size()) || l >= kNumClasses) {
      throw DatasetError("dataset: label " + std::to_string(l) + " out of range");
    }
  }
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double k[3] = {5, 3, 1};
  double out[3];
  for (int i = 0; i < 3; ++i) {
    const double t = std::fmod(k[i] + h * 6.0, 6.0);
    out[i] = v - v * s * std::clamp(std::min(t, 4.0 - t), 0.0, 1.0);
  }
  return {out[0], out[1], out[2]};
}

/// Pattern intensity t(u, v) in [0, 1] for one image of class `label`.
class Pattern {
 public:
  Pattern(int label, Rng& rng) : label_(label) {
    phase_[0] = rng.uniform(0, kTwoPi);
    phase_[1] = rng.uniform(0, kTwoPi);
    switch (label) {
      case 4: freq_ = rng.uniform(2.0, 3.5); break;
      case 5:
        freq_ = rng.uniform(4.0, 6.0);
        cx_ = rng.uniform(0.3, 0.7);
        cy_ = rng.uniform(0.3, 0.7);
        break;
      case 6: {
        const auto n = 3 + rng.below(4);
        for (std::uint64_t i = 0; i < n; ++i) {
          blobs_.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.06, 0.12)});
        }
        break;
      }
      case 7: freq_ = rng.uniform(7.0, 9.0); break;
      case 8:
        for (int i = 0; i < 4; ++i) {
          const double angle = rng.uniform(0, kTwoPi);
          const double f = rng.uniform(0.5, 1.5);
          waves_.push_back({f * std::cos(angle), f * std::sin(angle), rng.uniform(0, kTwoPi)});
        }
        break;
      default: freq_ = rng.uniform(3.0, 5.0); break;
    }
  }

  double operator()(double u, double v) const {
    switch (label_) {
      case 0: return wave(v);
      case 1: return wave(u);
      case 2: return wave((u + v) / std::numbers::sqrt2);
      case 3: return wave((u - v) / std::numbers::sqrt2);
      case 4: return std::sin(kTwoPi * freq_ * u + phase_[0]) * std::sin(kTwoPi * freq_ * v + phase_[1]) > 0 ? 1.0 : 0.0;
      case 5: return wave(std::hypot(u - cx_, v - cy_));
      case 6: {
        double t = 0;
        for (const auto& b : blobs_) t += std::exp(-((u - b.x) * (u - b.x) + (v - b.y) * (v - b.y)) / (2 * b.s * b.s));
        return std::min(t, 1.0);
      }
      case 7: {
        const double s = std::sin(kTwoPi * freq_ * u + phase_[0]) * std::sin(kTwoPi * freq_ * v + phase_[1]);
        return s * s;
      }
      default: {
        double t = 0;
        for (const auto& w : waves_) t += std::sin(kTwoPi * (w.x * u + w.y * v) + w.s);
        return 0.5 + t / 8.0;
      }
    }
  }

 private:
  struct Triple {
    double x, y, s;
  };

  double wave(double coord) const { return 0.5 + 0.5 * std::sin(kTwoPi * freq_ * coord + phase_[0]); }

  int label_;
  double freq_ = 1.0;
  double phase_[2] = {0, 0};
  double cx_ = 0.5, cy_ = 0.5;
  std::vector<Triple> blobs_;
  std::vector<Triple> waves_;
};

FloatTensor synth_image(int label, Index size, Rng& rng) {
  // Classes 0-7 sit on evenly spaced hues with jitter; negatives take any hue.
  const double hue = label < 8 ? label / 8.0 + rng.uniform(-0.05, 0.05) : rng.uniform();
  const Rgb fg = hsv(hue, rng.uniform(0.4, 0.9), rng.uniform(0.65, 1.0));
  const Rgb bg = hsv(hue + rng.uniform(-0.1, 0.1), rng.uniform(0.3, 0.8), rng.uniform(0.05, 0.35));
  const Pattern pattern(label, rng);
  FloatTensor img(Shape{3, size, size});
  const double inv = 1.0 / static_cast<double>(size);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const double t = pattern((x + 0.5) * inv, (y + 0.5) * inv);
      const double c[3] = {bg.r + (fg.r - bg.r) * t, bg.g + (fg.g - bg.g) * t, bg.b + (fg.b - bg.b) * t};
      for (Index ch = 0; ch < 3; ++ch) {
        const double v = c[ch] + 0.06 * rng.normal();
        img[(ch * size + y) * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace

Dataset generate_synthetic(std::uint64_t seed, Index per_class, Index size) {
  if (per_class < 1) throw DatasetError("generate_synthetic: per-class count must be at least 1");
  if (size < 1) throw DatasetError("generate_synthetic: image size must be positive");
  Rng rng(seed);
  Dataset d;
  for (int label = 0; label < kNumClasses; ++label) {
    const Index count = label == kNumClasses - 1 ? 8 * per_class : per_class;
    for (Index i = 0; i < count; ++i) {
      d.images.push_back(synth_image(label, size, rng));
      d.labels.push_back(label);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// P6 pixmaps
// ---------------------------------------------------------------------------

namespace {

/// Reads one header token, skipping whitespace and '#' comments.
std::string header_token(const std::string& bytes, std::size_t& pos, const fs::path& path) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#') ++pos;
  if (start == pos) throw FormatError(path.string() + ": truncated pixmap header");
  return bytes.substr(start, pos - start);
}

long header_number(const std::string& bytes, std::size_t& pos, const fs::path& path, const char* what) {
  const std::string tok = header_token(bytes, pos, path);
  if (tok.size() > 9 || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw FormatError(path.string() + ": bad pixmap " + what + " '" + tok + "'");
  }
  return std::stol(tok);
}

}  // namespace

FloatTensor read_ppm(const fs::path& path, Index size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read " + path.string());
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError(path.string() + ": not a binary pixmap (expected P6 magic)");
  }
  std::size_t pos = 2;
  const long w = header_number(bytes, pos, path, "width");
  const long h = header_number(bytes, pos, path, "height");
  const long maxval = header_number(bytes, pos, path, "maxval");
  if (w < 1 || h < 1) throw FormatError(path.string() + ": empty pixmap");
  if (maxval < 1 || maxval > 255) throw FormatError(path.string() + ": only 8-bit pixmaps are supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError(path.string() + ": malformed pixmap header");
  }
  ++pos;
  const auto need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (bytes.size() - pos < need) throw FormatError(path.string() + ": truncated pixel data");

  const Index out_h = size > 0 ? size : h;
  const Index out_w = size > 0 ? size : w;
  FloatTensor img(Shape{3, out_h, out_w});
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (Index y = 0; y < out_h; ++y) {
    const Index sy = y * h / out_h;
    for (Index x = 0; x < out_w; ++x) {
      const Index sx = x * w / out_w;
      for (Index c = 0; c < 3; ++c) {
        img[(c * out_h + y) * out_w + x] = static_cast<float>(px[(sy * w + sx) * 3 + c]) / static_cast<float>(maxval);
      }
    }
  }
  return img;
}

void write_ppm(const fs::path& path, const FloatTensor& image) {
  if (image.shape().rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm: expected a (3, H, W) image");
  const Index h = image.dim(1), w = image.dim(2);
  std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(image[(c * h + y) * w + x]), 0.0, 1.0);
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(round_half_even(v * 255.0))));
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset load_image_dir(const fs::path& root, Index size) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DatasetError(root.string() + " is not a directory");
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) classes.push_back(e.path());
  }
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw DatasetError(root.string() + ": no class subdirectories");
  if (static_cast<Index>(classes.size()) > kNumClasses) {
    throw DatasetError(root.string() + ": at most " + std::to_string(kNumClasses) + " classes are supported");
  }

  Dataset d;
  d.class_names.clear();
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[label])) {
      if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    }
    if (files.empty()) throw DatasetError(classes[label].string() + ": class directory has no .ppm images");
    std::sort(files.begin(), files.end());
    d.class_names.push_back(classes[label].filename().string());
    for (const auto& f : files) {
      d.images.push_back(read_ppm(f, size));
      d.labels.push_back(static_cast<int>(label));
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

namespace {

/// Distributes `total` slots over classes proportionally to `counts`
/// (floor quotas, then largest remainders). Equal remainders go first to
/// classes not in `avoid`, then to the lower class.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& counts, std::size_t n, std::size_t total,
                                   const std::vector<bool>& avoid = {}) {
  std::vector<std::size_t> quota(counts.size());
  std::vector<std::pair<std::size_t, std::size_t>> rem;  // (remainder numerator, class)
  std::size_t used = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    quota[c] = counts[c] * total / n;
    used += quota[c];
    rem.push_back({counts[c] * total % n, c});
  }
  auto avoided = [&](std::size_t c) { return !avoid.empty() && avoid[c]; };
  std::stable_sort(rem.begin(), rem.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return !avoided(a.second) && avoided(b.second);
  });
  for (std::size_t i = 0; used < total && i < rem.size(); ++i, ++used) ++quota[rem[i].second];
  return quota;
}

Dataset subset(const Dataset& d, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.class_names = d.class_names;
  for (auto i : idx) {
    out.images.push_back(d.images[i]);
    out.labels.push_back(d.labels[i]);
  }
  return out;
}

}  // namespace

DataSplit split(const Dataset& d, std::uint64_t seed) {
  d.validate();
  if (d.empty()) throw DatasetError("split: dataset is empty");
  const std::size_t n = d.size();
  const auto counts = d.class_counts();
  DataSplit out;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 5) {
      out.warnings.push_back("class '" + d.class_names[c] + "' has " + std::to_string(counts[c]) +
                             " samples; stratified split cannot preserve proportions");
    }
  }
  const std::size_t fifth = n / 5;
  const auto val_q = apportion(counts, n, fifth);
  // Test rounds up where validation did not, so no class loses two
  // samples from train to rounding.
  std::vector<bool> rounded_up(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) rounded_up[c] = val_q[c] * n > counts[c] * fifth;
  std::vector<std::size_t> left(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) left[c] = counts[c] - val_q[c];
  std::vector<std::size_t> test_q = apportion(counts, n, fifth, rounded_up);
  for (std::size_t c = 0; c < counts.size(); ++c) test_q[c] = std::min(test_q[c], left[c]);
  std::size_t assigned = std::accumulate(test_q.begin(), test_q.end(), std::size_t{0});
  for (std::size_t c = 0; assigned < fifth && c < counts.size(); ++c) {
    while (assigned < fifth && test_q[c] < left[c]) ++test_q[c], ++assigned;
  }

  Rng rng(seed);
  std::vector<std::size_t> tr, va, te;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (d.labels[i] == static_cast<int>(c)) members.push_back(i);
    }
    rng.shuffle(members);
    for (std::size_t k = 0; k < members.size(); ++k) {
      if (k < val_q[c]) {
        va.push_back(members[k]);
      } else if (k < val_q[c] + test_q[c]) {
        te.push_back(members[k]);
      } else {
        tr.push_back(members[k]);
      }
    }
  }
  out.train = subset(d, std::move(tr));
  out.val = subset(d, std::move(va));
  out.test = subset(d, std::move(te));
  return out;
}

FloatTensor make_batch(const Dataset& d, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DatasetError("make_batch: no samples selected");
  const Shape& s = d.images.at(indices.front()).shape();
  const Index per = s.numel();
  FloatTensor batch(Shape{static_cast<Index>(indices.size()), s[0], s[1], s[2]});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const FloatTensor& img = d.images.at(indices[k]);
    if (img.shape() != s) throw ShapeError("make_batch: images differ in shape");
    batch.array().segment(static_cast<Index>(k) * per, per) = img.array();
  }
  return batch;
}

FloatTensor make_batch(const Dataset& d, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return make_batch(d, idx);
}

}  // namespace qwid
