// SPDX-License-Identifier: Apache-2.0
#include "qwid/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "qwid/random.hpp"

namespace qwid {

int argmax_row(const FloatTensor& logits, Index r) {
  const Index classes = logits.dim(1);
  const float* row = logits.data() + r * classes;
  return static_cast<int>(std::max_element(row, row + classes) - row);
}

FloatTensor predict(const LayerGraph& g, const Dataset& d, Index batch) {
  if (d.empty()) throw DatasetError("predict: dataset is empty");
  FloatTensor out;
  Index classes = 0;
  for (std::size_t b0 = 0; b0 < d.size(); b0 += static_cast<std::size_t>(batch)) {
    const std::size_t b1 = std::min(d.size(), b0 + static_cast<std::size_t>(batch));
    const FloatTensor logits = forward(g, make_batch(d, b0, b1));
    if (out.empty()) {
      classes = logits.dim(1);
      out = FloatTensor(Shape{static_cast<Index>(d.size()), classes});
    }
    out.array().segment(static_cast<Index>(b0) * classes, logits.size()) = logits.array();
  }
  return out;
}

double accuracy(const LayerGraph& g, const Dataset& d) {
  const FloatTensor logits = predict(g, d);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) correct += argmax_row(logits, static_cast<Index>(i)) == d.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

EvalReport make_eval_report(const FloatTensor& logits, const std::vector<int>& labels,
                            const std::vector<std::string>& class_names) {
  if (logits.shape().rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw ShapeError("make_eval_report: logits and labels disagree");
  }
  const Index classes = logits.dim(1);
  const std::size_t k = class_names.size();
  EvalReport r;
  r.total = labels.size();
  r.class_names = class_names;
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t top1 = 0, top3 = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k || label >= classes) {
      throw DatasetError("make_eval_report: label " + std::to_string(label) + " out of range");
    }
    const int pred = argmax_row(logits, static_cast<Index>(i));
    if (static_cast<std::size_t>(pred) >= k) throw ShapeError("make_eval_report: more logits than class names");
    ++r.confusion[static_cast<std::size_t>(label)][static_cast<std::size_t>(pred)];
    const float* row = logits.data() + static_cast<Index>(i) * classes;
    const auto higher = std::count_if(row, row + classes, [&](float v) { return v > row[label]; });
    top1 += pred == label ? 1 : 0;
    top3 += higher < 3 ? 1 : 0;
  }
  if (r.total > 0) {
    r.top1 = static_cast<double>(top1) / static_cast<double>(r.total);
    r.top3 = static_cast<double>(top3) / static_cast<double>(r.total);
  }
  return r;
}

EvalReport evaluate(const LayerGraph& g, const Dataset& d) {
  d.validate();
  return make_eval_report(predict(g, d), d.labels, d.class_names);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["record"] = "eval";
  j["total"] = total;
  j["top1"] = top1;
  j["top3"] = top3;
  j["class_names"] = class_names;
  j["confusion"] = confusion;
  return j.dump();
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "top-1 %.4f  top-3 %.4f  (n=%zu)\n", top1, top3, total);
  os << buf << "confusion (rows actual, columns predicted)\n";
  for (std::size_t r = 0; r < confusion.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%-16.16s", class_names[r].c_str());
    os << buf;
    for (auto v : confusion[r]) {
      std::snprintf(buf, sizeof buf, "%6zu", v);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

BenchReport run_bench(const LayerGraph& g, const BenchOptions& opts) {
  if (opts.iters < 1) throw ArgumentError("bench: iterations must be at least 1");
  if (opts.warmup < 0) throw ArgumentError("bench: warmup must be non-negative");
  validate(g);

  // Input preparation happens before any timing.
  Rng rng(opts.seed);
  FloatTensor x(g.input.batch_shape(1));
  for (auto& v : x.span()) v = static_cast<float>(rng.uniform());

  float sink = 0;
  for (int i = 0; i < opts.warmup; ++i) sink += forward(g, x)[0];

  using clock = std::chrono::steady_clock;
  BenchReport r;
  r.samples_ms.reserve(static_cast<std::size_t>(opts.iters));
  for (int i = 0; i < opts.iters; ++i) {
    const auto t0 = clock::now();
    const FloatTensor y = forward(g, x);
    const auto t1 = clock::now();
    sink += y[0];
    r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  if (!std::isfinite(sink)) throw Error("bench: model produced non-finite output");

  r.model_path = opts.model_path;
  r.hardware = opts.hardware;
  r.mode = mode_name(g.mode);
  r.iterations = opts.iters;
  r.warmup = opts.warmup;
  std::vector<double> sorted = r.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.mean_ms = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  r.median_ms = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  r.min_ms = sorted.front();
  r.max_ms = sorted.back();
  r.ops = count_ops(g);
  r.throughput_gops = r.ops / 1e9 / (r.mean_ms / 1e3);
  r.memory_footprint_bytes = memory_footprint(g);
  return r;
}

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["record"] = "bench";
  j["model"] = model_path;
  j["hardware"] = hardware;
  j["mode"] = mode;
  j["iterations"] = iterations;
  j["warmup"] = warmup;
  j["mean_ms"] = mean_ms;
  j["median_ms"] = median_ms;
  j["min_ms"] = min_ms;
  j["max_ms"] = max_ms;
  j["ops"] = ops;
  j["throughput_gops"] = throughput_gops;
  j["model_size_bytes"] = model_size_bytes;
  j["memory_footprint_bytes"] = memory_footprint_bytes;
  j["samples_ms"] = samples_ms;
  return j.dump();
}

std::string BenchReport::to_table() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "model      %s (%s)\nhardware   %s\n", model_path.c_str(), mode.c_str(),
                hardware.empty() ? "(unspecified)" : hardware.c_str());
  os << buf;
  std::snprintf(buf, sizeof buf, "latency    mean %.4f ms  median %.4f ms  min %.4f ms  max %.4f ms  (%d iters, %d warmup)\n",
                mean_ms, median_ms, min_ms, max_ms, iterations, warmup);
  os << buf;
  std::snprintf(buf, sizeof buf, "ops        %.0f  throughput %.3f GOPs/s\n", ops, throughput_gops);
  os << buf;
  std::snprintf(buf, sizeof buf, "size       %llu bytes  footprint %zu bytes\n",
                static_cast<unsigned long long>(model_size_bytes), memory_footprint_bytes);
  os << buf;
  return os.str();
}

}  // namespace qwid
