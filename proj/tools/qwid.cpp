// SPDX-License-Identifier: Apache-2.0
// qwid: train | qat | convert | eval | bench | inspect

#include <CLI11.hpp>

#include <iostream>

#include "qwid/commands.hpp"

namespace {

void add_data_flags(CLI::App* cmd, qwid::DataOptions& d) {
  cmd->add_option("--data", d.data, "'synthetic' or a directory of <class>/*.ppm")->capture_default_str();
  cmd->add_option("--seed", d.seed, "seed for data generation, split and initialisation")->capture_default_str();
  cmd->add_option("--per-class", d.per_class, "synthetic images per class (negatives get 8x)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--size", d.size, "input resolution")->check(CLI::PositiveNumber)->capture_default_str();
}

void add_train_flags(CLI::App* cmd, qwid::TrainOptions& t) {
  add_data_flags(cmd, t.data);
  cmd->add_option("--arch", t.arch, "tinyresnet | tinyinception")
      ->check(CLI::IsMember({"tinyresnet", "tinyinception"}))
      ->capture_default_str();
  cmd->add_option("--epochs", t.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--lr", t.lr)->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd->add_option("--batch", t.batch)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--out", t.out, "output model path");
  cmd->add_option("--history", t.history, "per-epoch JSON lines (default <out>.history.jsonl)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"int8 quantization engine and benchmark harness"};
  app.require_subcommand(1);

  qwid::TrainOptions train_opts, qat_opts;
  qwid::ConvertOptions convert_opts;
  qwid::EvalOptions eval_opts;
  qwid::BenchCliOptions bench_opts;
  qwid::InspectOptions inspect_opts;

  auto* train = app.add_subcommand("train", "train an fp32 model");
  add_train_flags(train, train_opts);

  auto* qat = app.add_subcommand("qat", "quantization-aware training into a fake-quant checkpoint");
  add_train_flags(qat, qat_opts);
  qat->add_option("--init-from", qat_opts.init_from, "fp32 model to initialise from");

  auto* conv = app.add_subcommand("convert", "fake-quant checkpoint -> int8 model");
  conv->add_option("--model", convert_opts.model)->required();
  conv->add_option("--out", convert_opts.out);

  auto* eval = app.add_subcommand("eval", "top-1 / top-3 and confusion matrix on the test split");
  eval->add_option("--model", eval_opts.model)->required();
  add_data_flags(eval, eval_opts.data);
  eval->add_option("--report", eval_opts.report, "JSON lines output (default <model>.eval.jsonl)");

  auto* bench = app.add_subcommand("bench", "batch-1 forward latency");
  bench->add_option("--model", bench_opts.model)->required();
  bench->add_option("--iters", bench_opts.iters)->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_option("--warmup", bench_opts.warmup)->check(CLI::NonNegativeNumber)->capture_default_str();
  bench->add_option("--hardware", bench_opts.hardware, "free-text hardware description");
  bench->add_option("--seed", bench_opts.seed, "seed of the fixed input tensor")->capture_default_str();
  bench->add_option("--report", bench_opts.report, "JSON lines output");

  auto* inspect = app.add_subcommand("inspect", "ops count, per-layer table, memory footprint, size");
  inspect->add_option("--model", inspect_opts.model)->required();
  inspect->add_option("--report", inspect_opts.report, "JSON lines output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (train->parsed()) qwid::cmd_train(train_opts, std::cout);
    if (qat->parsed()) qwid::cmd_qat(qat_opts, std::cout);
    if (conv->parsed()) qwid::cmd_convert(convert_opts, std::cout);
    if (eval->parsed()) qwid::cmd_eval(eval_opts, std::cout);
    if (bench->parsed()) qwid::cmd_bench(bench_opts, std::cout);
    if (inspect->parsed()) qwid::cmd_inspect(inspect_opts, std::cout);
  } catch (const qwid::ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
