// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracle.hpp"
#include "qwid/data.hpp"

using namespace qwid;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qwid_test_" + name + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// 1000 one-pixel samples: 62 each for classes 0-7, 504 negatives.
Dataset thousand() {
  Dataset d;
  for (int i = 0; i < 1000; ++i) {
    d.images.push_back(FloatTensor(Shape{3, 1, 1}, {static_cast<float>(i) / 1000, 0, 0}));
    d.labels.push_back(i < 496 ? i / 62 : 8);
  }
  return d;
}

}  // namespace

TEST(Synthetic, CountsAndImbalance) {
  const Dataset d = generate_synthetic(1, 100, 16);
  EXPECT_EQ(d.size(), 1600u);
  const auto counts = d.class_counts();
  for (int c = 0; c < 8; ++c) EXPECT_EQ(counts[static_cast<std::size_t>(c)], 100u);
  EXPECT_EQ(counts[8], 800u);
  EXPECT_EQ(d.images[0].shape(), (Shape{3, 16, 16}));
  for (const auto& img : d.images) {
    EXPECT_GE(img.array().minCoeff(), 0.0f);
    EXPECT_LE(img.array().maxCoeff(), 1.0f);
  }
  EXPECT_EQ(d.class_names.size(), 9u);
}

TEST(Synthetic, SeedDeterminesBytes) {
  EXPECT_EQ(generate_synthetic(5, 3, 16), generate_synthetic(5, 3, 16));
  EXPECT_NE(generate_synthetic(5, 3, 16), generate_synthetic(6, 3, 16));
  EXPECT_THROW(generate_synthetic(5, 0, 16), DatasetError);
}

TEST(Synthetic, LinearlySeparableAboveChance) {
  // Nearest class mean on raw pixels is a linear classifier.
  const DataSplit s = split(generate_synthetic(2, 40, 16), 2);
  const Index dim = s.train.images[0].size();
  std::vector<Eigen::VectorXd> mean(9, Eigen::VectorXd::Zero(dim));
  std::vector<double> n(9, 0);
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    const auto c = static_cast<std::size_t>(s.train.labels[i]);
    mean[c] += s.train.images[i].array().cast<double>().matrix();
    n[c] += 1;
  }
  for (std::size_t c = 0; c < 9; ++c) mean[c] /= n[c];
  std::vector<double> hit(9, 0), total(9, 0);
  for (std::size_t i = 0; i < s.test.size(); ++i) {
    const Eigen::VectorXd x = s.test.images[i].array().cast<double>().matrix();
    std::size_t best = 0;
    for (std::size_t c = 1; c < 9; ++c) {
      if ((x - mean[c]).squaredNorm() < (x - mean[best]).squaredNorm()) best = c;
    }
    const auto y = static_cast<std::size_t>(s.test.labels[i]);
    total[y] += 1;
    if (best == y) hit[y] += 1;
  }
  int above = 0;
  for (std::size_t c = 0; c < 9; ++c) above += hit[c] / total[c] > 2.0 / 9.0 ? 1 : 0;
  EXPECT_GE(above, 2);
}

TEST(Split, SixtyTwentyTwenty) {
  const DataSplit s = split(thousand(), 3);
  EXPECT_EQ(s.train.size(), 600u);
  EXPECT_EQ(s.val.size(), 200u);
  EXPECT_EQ(s.test.size(), 200u);
  EXPECT_TRUE(s.warnings.empty());
}

TEST(Split, StratifiedWithinOne) {
  for (const Dataset& d : {thousand(), generate_synthetic(1, 100, 4), generate_synthetic(2, 37, 4)}) {
    const DataSplit s = split(d, 4);
    const auto all = d.class_counts();
    const std::pair<const Dataset*, double> parts[] = {{&s.train, 0.6}, {&s.val, 0.2}, {&s.test, 0.2}};
    for (const auto& [part, frac] : parts) {
      const auto counts = part->class_counts();
      for (std::size_t c = 0; c < 9; ++c) {
        EXPECT_LE(std::abs(static_cast<double>(counts[c]) - frac * static_cast<double>(all[c])), 1.0)
            << "class " << c << " of " << d.size();
      }
    }
  }
}

TEST(Split, DeterministicDisjointAndComplete) {
  const Dataset d = thousand();
  const DataSplit a = split(d, 5), b = split(d, 5), c = split(d, 6);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.test, c.test);
  std::vector<float> seen;
  for (const Dataset* p : {&a.train, &a.val, &a.test}) {
    for (const auto& img : p->images) seen.push_back(img[0]);
  }
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(Split, WarnsOnTinyClasses) {
  Dataset tiny;
  for (int i = 0; i < 12; ++i) {
    tiny.images.push_back(FloatTensor(Shape{3, 1, 1}));
    tiny.labels.push_back(i < 10 ? 8 : 0);
  }
  EXPECT_FALSE(split(tiny, 1).warnings.empty());
  EXPECT_THROW(split(Dataset{}, 1), DatasetError);
}

TEST(Ppm, RoundTripWithinEightBitRounding) {
  const fs::path dir = scratch_dir("ppm");
  Rng rng(90);
  FloatTensor img(Shape{3, 5, 7});
  for (auto& v : img.span()) v = static_cast<float>(rng.uniform());
  write_ppm(dir / "a.ppm", img);
  const FloatTensor back = read_ppm(dir / "a.ppm");
  ASSERT_EQ(back.shape(), img.shape());
  EXPECT_LE(oracle::max_abs_diff(back, img), 0.5 / 255 + 1e-6);
  // Exactly representable values survive unchanged.
  write_ppm(dir / "b.ppm", back);
  EXPECT_EQ(read_ppm(dir / "b.ppm"), back);
  EXPECT_EQ(read_ppm(dir / "a.ppm", 4).shape(), (Shape{3, 4, 4}));
  fs::remove_all(dir);
}

TEST(Ppm, Errors) {
  const fs::path dir = scratch_dir("ppm_bad");
  std::ofstream(dir / "p5.ppm", std::ios::binary) << "P5\n1 1\n255\n\x01";
  EXPECT_THROW(read_ppm(dir / "p5.ppm"), FormatError);
  std::ofstream(dir / "short.ppm", std::ios::binary) << "P6\n2 2\n255\n\x01\x02";
  EXPECT_THROW(read_ppm(dir / "short.ppm"), FormatError);
  EXPECT_THROW(read_ppm(dir / "missing.ppm"), IoError);
  fs::remove_all(dir);
}

TEST(ImageDir, NineSubdirectories) {
  const fs::path dir = scratch_dir("imgdir");
  for (int c = 0; c < 9; ++c) {
    const fs::path sub = dir / ("class" + std::to_string(c));
    fs::create_directories(sub);
    write_ppm(sub / "x.ppm", FloatTensor::constant(Shape{3, 4, 4}, static_cast<float>(c) / 8));
  }
  const Dataset d = load_image_dir(dir, 8);
  EXPECT_EQ(d.size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(d.labels[i], static_cast<int>(i));
    EXPECT_EQ(d.class_names[i], "class" + std::to_string(i));
    EXPECT_EQ(d.images[i].shape(), (Shape{3, 8, 8}));
  }
  fs::create_directories(dir / "zz_empty");
  EXPECT_THROW(load_image_dir(dir, 8), DatasetError);
  EXPECT_THROW(load_image_dir(dir / "nope", 8), DatasetError);
  fs::remove_all(dir);
}

TEST(Batch, Stacks) {
  const Dataset d = generate_synthetic(7, 1, 8);
  const FloatTensor b = make_batch(d, std::vector<std::size_t>{3, 0});
  EXPECT_EQ(b.shape(), (Shape{2, 3, 8, 8}));
  EXPECT_EQ(b.array().head(d.images[3].size()).matrix(), d.images[3].array().matrix());
  EXPECT_THROW(make_batch(d, std::vector<std::size_t>{}), DatasetError);
}
