// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qwid/data.hpp"
#include "qwid/graph.hpp"

namespace qwid {

/// Index of the largest entry of row `r` (first one on ties).
int argmax_row(const FloatTensor& logits, Index r);

/// Logits (N, classes) for every image, computed in batches.
FloatTensor predict(const LayerGraph& g, const Dataset& d, Index batch = 64);
double accuracy(const LayerGraph& g, const Dataset& d);

/// Rows are actual classes, columns predicted classes.
struct EvalReport {
  std::size_t total = 0;
  double top1 = 0;
  double top3 = 0;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::size_t>> confusion;

  std::string to_json() const;
  std::string to_table() const;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// A sample counts toward top-k when fewer than k classes score strictly
/// higher than its label.
EvalReport make_eval_report(const FloatTensor& logits, const std::vector<int>& labels,
                            const std::vector<std::string>& class_names);
EvalReport evaluate(const LayerGraph& g, const Dataset& d);

struct BenchOptions {
  int iters = 100;
  int warmup = 10;
  std::string hardware;
  std::string model_path;
  std::uint64_t seed = 0;
};

struct BenchReport {
  std::string model_path;
  std::string hardware;
  std::string mode;
  int iterations = 0;
  int warmup = 0;
  std::vector<double> samples_ms;
  double mean_ms = 0;
  double median_ms = 0;
  double min_ms = 0;
  double max_ms = 0;
  double ops = 0;
  /// ops / mean latency, in billions per second.
  double throughput_gops = 0;
  std::uint64_t model_size_bytes = 0;
  std::size_t memory_footprint_bytes = 0;

  std::string to_json() const;
  std::string to_table() const;
};

/// Batch-1 latency of `forward` on a fixed input built before timing
/// starts: `warmup` untimed passes, then `iters` passes each timed on a
/// monotonic clock around the forward call alone.
BenchReport run_bench(const LayerGraph& g, const BenchOptions& opts);

}  // namespace qwid
