// icsml-casestudy: dataset generation, closed-loop simulation and trace
// replay for the desalination detector.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "icsml/case_study.hpp"
#include "icsml/model_io.hpp"

namespace msf = icsml::msf;
using json = nlohmann::ordered_json;

namespace {

std::vector<msf::AttackKind> parse_attack_list(const std::string& text) {
  std::vector<msf::AttackKind> kinds;
  if (text == "all") return {msf::kAllAttacks.begin(), msf::kAllAttacks.end()};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto k = msf::parse_attack(item);
    if (!k) throw CLI::ValidationError("--attacks", "unknown attack '" + item + "'");
    kinds.push_back(*k);
  }
  return kinds;
}

json detection_report(const std::vector<std::int8_t>& classes, std::optional<std::uint64_t> first,
                      std::uint64_t attack_count, const std::vector<std::uint8_t>* labels) {
  json r;
  r["cycles"] = classes.size();
  r["first_attack_cycle"] = first ? json(*first) : json(nullptr);
  r["attack_classifications"] = attack_count;
  if (labels) {
    std::size_t correct = 0, scored = 0, false_pos = 0;
    std::optional<std::size_t> onset;
    for (std::size_t k = 0; k < classes.size() && k < labels->size(); ++k) {
      if (!onset && (*labels)[k]) onset = k;
      if (classes[k] < 0) continue;
      ++scored;
      correct += static_cast<std::uint8_t>(classes[k]) == (*labels)[k];
      false_pos += classes[k] == 1 && (*labels)[k] == 0;
    }
    r["scored_cycles"] = scored;
    r["accuracy"] = scored ? static_cast<double>(correct) / static_cast<double>(scored) : 0.0;
    r["false_positives"] = false_pos;
    r["attack_onset_cycle"] = onset ? json(*onset) : json(nullptr);
    if (onset && first && *first >= *onset) r["detection_latency_cycles"] = *first - *onset;
  }
  return r;
}

void write_report(const std::string& path, const json& report) {
  if (path.empty() || path == "-") {
    std::cout << report.dump(2) << "\n";
    return;
  }
  std::ofstream os(path);
  if (!os) throw icsml::Error(icsml::ErrorCode::IOFailure, path);
  os << report.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desalination case study: data generation, simulation and detection"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "simulate labelled episodes for training");
  msf::DatasetConfig dcfg;
  std::string attacks = "all";
  std::string gen_out = "dataset";
  gen->add_option("--seed", dcfg.seed, "dataset seed");
  gen->add_option("--attacks", attacks, "comma-separated attack kinds (names or 1..7), or 'all'");
  gen->add_option("--episodes", dcfg.attacked_episodes, "attacked episodes");
  gen->add_option("--normal", dcfg.normal_episodes, "attack-free episodes");
  gen->add_option("--cycles", dcfg.cycles_per_episode, "cycles per episode");
  gen->add_option("--out", gen_out, "output directory");

  // simulate
  auto* sim = app.add_subcommand("simulate", "closed-loop run, optionally with the detector installed");
  msf::SimulationConfig scfg;
  std::string attack_kind;
  std::uint64_t attack_start = 436;
  double magnitude = 0.0;
  std::string sim_trace, sim_manifest, sim_report;
  sim->add_option("--seed", scfg.seed, "plant noise seed");
  sim->add_option("--cycles", scfg.cycles, "scan cycles to run");
  sim->add_option("--attack", attack_kind, "attack kind (name or 1..7)");
  sim->add_option("--start", attack_start, "attack start cycle");
  sim->add_option("--magnitude", magnitude, "attack magnitude (default per kind)");
  sim->add_option("--trace", sim_trace, "write the sensor trace here (labels go to <trace>.labels)");
  sim->add_option("--manifest", sim_manifest, "detector manifest");
  sim->add_option("--report", sim_report, "detection report path ('-' for stdout)");

  // run
  auto* run = app.add_subcommand("run", "replay a recorded sensor trace through the detector");
  std::string run_manifest, run_trace, run_labels, run_report = "-";
  run->add_option("--manifest", run_manifest, "detector manifest")->required()->check(CLI::ExistingFile);
  run->add_option("--trace", run_trace, "2-channel trace (.bin)")->required()->check(CLI::ExistingFile);
  run->add_option("--labels", run_labels, "label sidecar (defaults to the trace's .labels file if present)");
  run->add_option("--report", run_report, "report path ('-' for stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      dcfg.attacks = parse_attack_list(attacks);
      const auto episodes = msf::generate_dataset(dcfg);
      msf::write_dataset(gen_out, dcfg, episodes);
      std::cout << "wrote " << episodes.size() << " episodes to " << gen_out << "\n";
      return 0;
    }

    if (sim->parsed()) {
      if (!attack_kind.empty()) {
        const auto k = msf::parse_attack(attack_kind);
        if (!k) throw CLI::ValidationError("--attack", "unknown attack '" + attack_kind + "'");
        scfg.attack = msf::AttackSpec::make(*k, attack_start);
        if (magnitude != 0.0) scfg.attack->magnitude = magnitude;
      }
      std::optional<icsml::SequentialModel> model;
      if (!sim_manifest.empty()) model.emplace(icsml::build_model(icsml::load_manifest(sim_manifest)));
      const auto trace = msf::simulate(scfg, model ? &*model : nullptr);
      if (!sim_trace.empty()) {
        icsml::write_trace(sim_trace, trace.sensors);
        icsml::write_labels(sim_trace + ".labels", trace.labels);
      }
      if (model) {
        auto report = detection_report(trace.classes, trace.first_attack_cycle, trace.attack_classifications,
                                       &trace.labels);
        report["overruns"] = trace.overruns;
        write_report(sim_report, report);
      }
      return 0;
    }

    if (run->parsed()) {
      auto model = icsml::build_model(icsml::load_manifest(run_manifest));
      const auto sensors = icsml::read_trace(run_trace, msf::kFeatures);
      std::vector<std::uint8_t> labels;
      if (run_labels.empty()) {
        for (auto candidate : {run_trace + ".labels", std::filesystem::path(run_trace).replace_extension(".labels").string()}) {
          if (std::filesystem::exists(candidate)) {
            run_labels = candidate;
            break;
          }
        }
      }
      if (!run_labels.empty()) labels = icsml::read_labels(run_labels);
      const auto result = msf::replay(model, sensors);
      auto report = detection_report(result.classes, result.first_attack_cycle, result.attack_classifications,
                                     run_labels.empty() ? nullptr : &labels);
      report["inferences"] = result.inferences;
      write_report(run_report, report);
      return 0;
    }
  } catch (const icsml::Error& e) {
    std::cerr << "icsml-casestudy: " << e.what() << "\n";
    return 1;
  } catch (const CLI::Error& e) {
    return app.exit(e);
  }
  return 0;
}
