// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "qwid/data.hpp"
#include "qwid/graph.hpp"
#include "qwid/qat.hpp"

namespace qwid {

/// Where images come from. `data` is "synthetic" or a directory path.
struct DataOptions {
  std::string data = "synthetic";
  std::uint64_t seed = 0;
  Index per_class = 100;
  Index size = 32;
};

/// Dataset plus its seeded split, as every command sees it.
DataSplit load_splits(const DataOptions& opts);

struct TrainOptions {
  DataOptions data;
  std::string arch = "tinyresnet";
  int epochs = 30;
  double lr = 1e-4;
  Index batch = 32;
  std::string out;
  std::string history;    // defaults to <out>.history.jsonl
  std::string init_from;  // qat only
};

struct ConvertOptions {
  std::string model;
  std::string out;
};

struct EvalOptions {
  DataOptions data;
  std::string model;
  std::string report;  // defaults to <model>.eval.jsonl
};

struct BenchCliOptions {
  std::string model;
  int iters = 100;
  int warmup = 10;
  std::string hardware;
  std::string report;
  std::uint64_t seed = 0;
};

struct InspectOptions {
  std::string model;
  std::string report;
};

/// Each command writes human-readable output to `out` and throws qwid::Error
/// on failure.
void cmd_train(const TrainOptions& opts, std::ostream& out);
void cmd_qat(const TrainOptions& opts, std::ostream& out);
void cmd_convert(const ConvertOptions& opts, std::ostream& out);
void cmd_eval(const EvalOptions& opts, std::ostream& out);
void cmd_bench(const BenchCliOptions& opts, std::ostream& out);
void cmd_inspect(const InspectOptions& opts, std::ostream& out);

/// Seed used for model initialisation, derived from the data seed.
std::uint64_t init_seed(std::uint64_t seed);

}  // namespace qwid
