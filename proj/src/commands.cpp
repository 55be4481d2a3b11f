// SPDX-License-Identifier: Apache-2.0
#include "qwid/commands.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>

#include "qwid/evaluation.hpp"
#include "qwid/model_io.hpp"
#include "qwid/random.hpp"

namespace qwid {

std::uint64_t init_seed(std::uint64_t seed) { return Rng::splitmix64(seed ^ 0x5157494400000001ull); }

namespace {

std::uint64_t split_seed(std::uint64_t seed) { return Rng::splitmix64(seed ^ 0x5157494400000002ull); }

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot create " + path);
  return f;
}

QatConfig config_of(const TrainOptions& o) {
  QatConfig c;
  c.lr = o.lr;
  c.epochs = o.epochs;
  c.batch = o.batch;
  c.seed = o.data.seed;
  c.validate();
  return c;
}

InputSpec input_of(const DataOptions& d) { return InputSpec{3, d.size, d.size}; }

std::string epoch_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["record"] = "epoch";
  j["epoch"] = r.epoch;
  j["train_acc"] = r.train_acc;
  j["val_acc"] = r.val_acc;
  j["loss"] = r.loss;
  return j.dump();
}

void run_training(LayerGraph g, const TrainOptions& o, const std::string& default_out, std::ostream& out) {
  const QatConfig cfg = config_of(o);
  const DataSplit data = load_splits(o.data);
  for (const auto& w : data.warnings) out << "warning: " << w << '\n';
  const std::string model_path = o.out.empty() ? default_out : o.out;
  const std::string history_path = o.history.empty() ? model_path + ".history.jsonl" : o.history;
  std::ofstream history = open_out(history_path);
  out << "training " << mode_name(g.mode) << " model on " << data.train.size() << " images (val " << data.val.size()
      << ", test " << data.test.size() << "), " << cfg.epochs << " epochs, lr " << cfg.lr << ", batch " << cfg.batch << '\n';
  TrainResult result = train(std::move(g), data.train, data.val, cfg, [&](const EpochRecord& r) {
    history << epoch_line(r) << '\n';
    history.flush();
    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch %3d  loss %.4f  train %.4f  val %.4f\n", r.epoch, r.loss, r.train_acc, r.val_acc);
    out << buf << std::flush;
  });
  const auto bytes = save(result.graph, model_path);
  out << "saved " << model_path << " (" << bytes << " bytes), history " << history_path << '\n';
}

}  // namespace

DataSplit load_splits(const DataOptions& opts) {
  Dataset d = opts.data == "synthetic" ? generate_synthetic(opts.seed, opts.per_class, opts.size)
                                       : load_image_dir(opts.data, opts.size);
  return split(d, split_seed(opts.seed));
}

void cmd_train(const TrainOptions& o, std::ostream& out) {
  if (!o.init_from.empty()) throw ArgumentError("train: --init-from only applies to qat");
  run_training(make_model(parse_arch(o.arch), init_seed(o.data.seed), input_of(o.data)), o, "model_fp32.qwid", out);
}

void cmd_qat(const TrainOptions& o, std::ostream& out) {
  LayerGraph base;
  if (o.init_from.empty()) {
    base = make_model(parse_arch(o.arch), init_seed(o.data.seed), input_of(o.data));
  } else {
    if (!std::filesystem::exists(o.init_from)) throw IoError("qat: --init-from file " + o.init_from + " does not exist");
    base = load(o.init_from);
    if (base.mode != NumericMode::kFloat32) throw ArgumentError("qat: --init-from must be an fp32 model");
    out << "initialised from " << o.init_from << '\n';
  }
  run_training(prepare_qat(base), o, "model_qat.qwid", out);
}

void cmd_convert(const ConvertOptions& o, std::ostream& out) {
  const LayerGraph g = load(o.model);
  if (g.mode != NumericMode::kFakeQuant) {
    throw ConversionError("convert: " + o.model + " is a " + mode_name(g.mode) +
                          " model without observers; run qat first");
  }
  const LayerGraph q = convert(g);
  const std::string path = o.out.empty() ? "model_int8.qwid" : o.out;
  const auto bytes = save(q, path);
  out << "saved " << path << " (" << bytes << " bytes, int8)\n";
}

void cmd_eval(const EvalOptions& o, std::ostream& out) {
  const LayerGraph g = load(o.model);
  const DataSplit data = load_splits(o.data);
  const EvalReport r = evaluate(g, data.test);
  out << o.model << " (" << mode_name(g.mode) << ") on " << data.test.size() << " test images\n" << r.to_table();
  const std::string path = o.report.empty() ? o.model + ".eval.jsonl" : o.report;
  open_out(path) << r.to_json() << '\n';
  out << "report " << path << '\n';
}

void cmd_bench(const BenchCliOptions& o, std::ostream& out) {
  const LayerGraph g = load(o.model);
  BenchOptions b;
  b.iters = o.iters;
  b.warmup = o.warmup;
  b.hardware = o.hardware;
  b.model_path = o.model;
  b.seed = o.seed;
  BenchReport r = run_bench(g, b);
  r.model_size_bytes = model_size_bytes(o.model);
  out << r.to_table();
  if (!o.report.empty()) {
    open_out(o.report) << r.to_json() << '\n';
    out << "report " << o.report << '\n';
  }
}

void cmd_inspect(const InspectOptions& o, std::ostream& out) {
  const LayerGraph g = load(o.model);
  const auto shapes = infer_shapes(g, 1);
  const auto ops = node_ops(g);
  const auto foot = node_footprints(g);
  const bool int8 = g.mode == NumericMode::kInt8;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%4s  %-13s %-10s %-18s %14s %12s\n", "id", "op", "inputs", "output", int8 ? "ops" : "flops",
                "footprint");
  out << o.model << " (" << mode_name(g.mode) << ")\n" << buf;
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& n : g.nodes) {
    std::string ins;
    for (int in : n.inputs) ins += (ins.empty() ? "" : ",") + (in == kGraphInput ? std::string("in") : std::to_string(in));
    const auto i = static_cast<std::size_t>(n.id);
    std::snprintf(buf, sizeof buf, "%4d  %-13s %-10s %-18s %14.0f %12zu\n", n.id, op_name(n.kind), ins.c_str(),
                  shapes[i].to_string().c_str(), ops[i], foot[i]);
    out << buf;
    layers.push_back({{"id", n.id}, {"op", op_name(n.kind)}, {"inputs", n.inputs}, {"output", shapes[i].dims()},
                      {"ops", ops[i]}, {"footprint_bytes", foot[i]}});
  }
  const double total = count_ops(g);
  const std::size_t footprint = memory_footprint(g);
  const auto size = model_size_bytes(o.model);
  std::snprintf(buf, sizeof buf, "total %s %.6f  (%.0f)\nmemory footprint %zu bytes\nmodel size %llu bytes, %zu parameters\n",
                int8 ? "GOPs" : "GFLOPs", total / 1e9, total, footprint, static_cast<unsigned long long>(size),
                g.parameter_count());
  out << buf;
  if (!o.report.empty()) {
    nlohmann::ordered_json j;
    j["record"] = "inspect";
    j["model"] = o.model;
    j["mode"] = mode_name(g.mode);
    j["ops"] = total;
    j["memory_footprint_bytes"] = footprint;
    j["model_size_bytes"] = size;
    j["parameters"] = g.parameter_count();
    j["layers"] = layers;
    open_out(o.report) << j.dump() << '\n';
  }
}

}  // namespace qwid
