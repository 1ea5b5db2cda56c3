#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sbflow/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Schrodinger bridge flow experiments"};
  app.require_subcommand(1, 1);

  sbflow::CliOptions opts;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string checkpoint;
  bool ema = true;

  const std::pair<const char*, const char*> commands[] = {
      {"pretrain", "Bridge-matching pretraining from the initial coupling"},
      {"finetune", "Online or iterative finetuning from a pretrain checkpoint"},
      {"eval", "Evaluate a checkpoint (PF-ODE and SDE sampling)"},
      {"gaussian-analytic", "Closed-form Gaussian recursions and EOT oracle"},
      {"toy-flow", "Two-dimensional projection flow and its discrete iterates"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config_path, "Experiment config file")->required();
    sub->add_option("--seed", seed, "Override train.seed");
    sub->add_option("--out", out_dir, "Override run.out_dir");
    sub->add_option("--checkpoint", checkpoint, "Checkpoint path");
    sub->add_flag("--ema,!--no-ema", ema, "Sample with EMA parameters");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? sbflow::kExitOk : sbflow::kExitUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opts.seed = seed;
  if (sub->count("--out")) opts.out_dir = out_dir;
  if (sub->count("--checkpoint")) opts.checkpoint = checkpoint;
  if (sub->count("--ema") || sub->count("--no-ema")) opts.use_ema = ema;
  return sbflow::run_command(sub->get_name(), opts, std::cerr);
}
