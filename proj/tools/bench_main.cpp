// icsml-bench: host benchmarks with CSV output. Exits nonzero when a
// property check fails.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "icsml/bench.hpp"
#include "icsml/model_io.hpp"
#include "icsml/runtime.hpp"

namespace bench = icsml::bench;

namespace {

icsml::bench::BenchReport bench_multipart(const std::string& manifest_path, double budget_fraction,
                                          const bench::BenchOptions& opt) {
  bench::BenchReport report;
  report.experiment = "multipart";

  // Host cost model from a short width sweep.
  bench::BenchOptions quick = opt;
  quick.min_batch_us = 500.0;
  const auto widths = bench::doubling_widths(32, 1024);
  const auto width_report = bench::bench_layer_width(widths, quick);
  const icsml::CostModel cost = bench::fit_cost_model(width_report);

  auto model = icsml::build_model(icsml::load_manifest(manifest_path));
  const auto input = bench::random_vector(model.input_size(), opt.seed + 3, 80.0f, 100.0f);
  model.set_input(input);
  model.evaluate();
  const std::vector<float> reference(model.output().begin(), model.output().end());

  std::int64_t total_ns = 0;
  for (const auto& layer : model.layers()) total_ns += cost.layer_cost_ns(layer);
  const double budget_us = budget_fraction * static_cast<double>(total_ns) / 1000.0;
  const auto plan = icsml::plan_multipart(model, cost, budget_us);

  icsml::MultipartInference mp(plan);
  mp.start(model, input);
  std::size_t cycles = 0;
  while (!mp.step(model)) ++cycles;
  ++cycles;
  report.check("multipart output bitwise equal to single-shot", bench::bitwise_equal(model.output(), reference));
  report.check("cycles == chunk count", cycles == plan.chunks.size(),
               std::to_string(cycles) + " cycles, " + std::to_string(plan.chunks.size()) + " chunks");

  const auto timing = bench::time_calls(
      [&] {
        mp.start(model, input);
        while (!mp.step(model)) {
        }
      },
      opt.timing());
  const auto single = bench::time_calls([&] { model.evaluate(); }, opt.timing());
  icsml::OpCounters none;
  const double x = budget_fraction;
  report.rows.push_back({"multipart", "single_shot", "total", x, opt.timing().repeats, single, none});
  report.rows.push_back({"multipart", std::to_string(plan.chunks.size()) + "_chunks", "total", x,
                         opt.timing().repeats, timing, none});
  bench::Timing modeled;
  modeled.mean_us = modeled.median_of_means_us = static_cast<double>(plan.total_cost_ns) / 1000.0;
  report.rows.push_back({"multipart", "plan", "modeled_total", x, 1, modeled, none});
  modeled.mean_us = modeled.median_of_means_us = static_cast<double>(plan.budget_ns) / 1000.0;
  report.rows.push_back({"multipart", "plan", "budget", x, 1, modeled, none});
  return report;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ICSML host benchmarks"};
  app.require_subcommand(1);
  bench::BenchOptions opt;
  std::string out;
  app.add_option("--repeats", opt.repeats, "timed repeats per row (minimum 10)");
  app.add_option("--seed", opt.seed, "random seed for weights and inputs");
  app.add_option("--out", out, "CSV output path (default stdout)");
  app.add_option("--min-r2", opt.min_r2, "linear-fit acceptance threshold");

  auto* stack = app.add_subcommand("stack", "layer stacking: 1..N dense layers");
  std::size_t max_layers = 16;
  std::uint32_t stack_width = 64;
  stack->add_option("--max-layers", max_layers);
  stack->add_option("--width", stack_width);

  auto* width = app.add_subcommand("width", "layer width: one dense layer, doubling widths");
  std::uint32_t min_width = 32, max_width = 4096;
  width->add_option("--min-width", min_width);
  width->add_option("--max-width", max_width);

  auto* quant = app.add_subcommand("quant", "quantization schemes on one dense layer");
  std::uint32_t q_inputs = 512, q_neurons = 512;
  quant->add_option("--inputs", q_inputs);
  quant->add_option("--neurons", q_neurons);

  auto* prune = app.add_subcommand("prune", "pruning sparsity x skip policy x scheme");
  bench::PruneOptions popt;
  prune->add_option("--inputs", popt.inputs);
  prune->add_option("--neurons", popt.neurons);
  prune->add_option("--sparsity", popt.sparsities, "sparsity levels")->delimiter(',');

  auto* multipart = app.add_subcommand("multipart", "multipart inference of a manifest model");
  std::string manifest = std::string(ICSML_MODELS_DIR) + "/msf_detector/manifest.json";
  double budget_fraction = 0.5;
  multipart->add_option("--manifest", manifest)->check(CLI::ExistingFile);
  multipart->add_option("--budget-fraction", budget_fraction, "per-cycle budget as a fraction of full cost");

  CLI11_PARSE(app, argc, argv);
  if (opt.repeats < 10) opt.repeats = 10;

  bench::BenchReport report;
  try {
    if (stack->parsed()) {
      report = bench::bench_layer_stacking(max_layers, opt, stack_width);
    } else if (width->parsed()) {
      report = bench::bench_layer_width(bench::doubling_widths(min_width, max_width), opt);
    } else if (quant->parsed()) {
      const icsml::QuantScheme schemes[] = {icsml::QuantScheme::F32, icsml::QuantScheme::Q32,
                                            icsml::QuantScheme::Q16, icsml::QuantScheme::Q8};
      report = bench::bench_quantization(q_inputs, q_neurons, schemes, opt);
    } else if (prune->parsed()) {
      report = bench::bench_pruning(popt, opt);
    } else if (multipart->parsed()) {
      report = bench_multipart(manifest, budget_fraction, opt);
    }
  } catch (const icsml::Error& e) {
    std::cerr << "icsml-bench: " << e.what() << "\n";
    return 2;
  }

  if (out.empty()) {
    bench::write_csv(std::cout, report);
  } else {
    std::ofstream os(out);
    if (!os) {
      std::cerr << "icsml-bench: cannot write " << out << "\n";
      return 2;
    }
    bench::write_csv(os, report);
  }
  for (const auto& c : report.checks) {
    std::cerr << (c.passed ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : " (" + c.detail + ")") << "\n";
  }
  return report.ok() ? 0 : 1;
}
