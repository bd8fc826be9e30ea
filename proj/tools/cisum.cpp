#include <iomanip>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "cisum/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multimodal summarisation: training, inference and evaluation"};
  app.require_subcommand(1, 1);

  cisum::cli::RunSpec spec;
  std::string config, checkpoint;
  std::uint64_t seed = 0;
  double tau = 0;
  const std::map<std::string, std::string> help{
      {"train", "Train the summariser on train_path"},
      {"evaluate", "Score predictions_path against test_path"},
      {"summarize", "Write predictions for test_path"},
      {"synth-data", "Generate synthetic train/test corpora"},
      {"gen-scsc-data", "Build sentence coherence pairs from train_path titles"},
      {"train-scsc", "Train the sentence coherence classifier"},
  };
  for (const auto& name : cisum::cli::kCommands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config, "Config file of key = value lines")->check(CLI::ExistingFile);
    sub->add_option("--set", spec.overrides, "Override one config key (key=value), repeatable");
    sub->add_option("--out", spec.out, "Output directory")->default_val(".");
    sub->add_option("--seed", seed, "Model, training and sampling seed");
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint");
    sub->add_option("--tau", tau, "MSC match threshold in [-1, 1]");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << R"({"error":"usage_error","message":)" << std::quoted(e.what()) << "}\n";
    return 2;
  }
  auto* sub = app.get_subcommands().front();
  spec.command = sub->get_name();
  if (sub->count("--config")) spec.config = config;
  if (sub->count("--checkpoint")) spec.checkpoint = checkpoint;
  if (sub->count("--seed")) spec.seed = seed;
  if (sub->count("--tau")) spec.tau = tau;

  cisum::cli::init_logging();
  return cisum::cli::run(spec, std::cerr);
}
