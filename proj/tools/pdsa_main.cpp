#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdsa/commands.hpp"

namespace {

struct CliState {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string out_dir;
  std::string input;
};

void add_common_options(CLI::App* cmd, CliState& st) {
  cmd->add_option("--config", st.config_path, "config file of 'section.key = value' lines");
  cmd->add_option("--set", st.overrides, "override a config key, e.g. --set train.epochs=5")
      ->take_all();
  cmd->add_option("--out", st.out_dir, "output directory (overrides io.out_dir)");
  cmd->footer(pdsa::config_help_text());
}

pdsa::RunConfig build_config(const CliState& st) {
  pdsa::RunConfig cfg;
  if (!st.config_path.empty()) pdsa::load_config_file(cfg, st.config_path);
  for (const std::string& kv : st.overrides) pdsa::apply_config_override(cfg, kv);
  if (!st.out_dir.empty()) cfg.io.out_dir = st.out_dir;
  if (!st.checkpoint.empty()) cfg.io.checkpoint = st.checkpoint;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical point-cloud classifier with descriptor-guided corrections"};
  app.require_subcommand(1);
  app.footer(pdsa::config_help_text());

  CliState st;
  CLI::App* train = app.add_subcommand("train", "train a model; writes checkpoints + CSV log");
  add_common_options(train, st);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint; prints metrics CSV");
  add_common_options(eval, st);
  eval->add_option("--checkpoint", st.checkpoint, "checkpoint to load (overrides io.checkpoint)");

  CLI::App* ablate =
      app.add_subcommand("ablate", "train the 4-variant correction ladder across seeds");
  add_common_options(ablate, st);

  CLI::App* inspect =
      app.add_subcommand("inspect", "write attention heat + key-point PLYs for one cloud");
  add_common_options(inspect, st);
  inspect->add_option("--checkpoint", st.checkpoint, "checkpoint to load (overrides io.checkpoint)");
  inspect->add_option("--input", st.input, "input PLY cloud")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const pdsa::RunConfig cfg = build_config(st);
    if (train->parsed()) return pdsa::cmd_train(cfg);
    if (eval->parsed()) return pdsa::cmd_eval(cfg);
    if (ablate->parsed()) return pdsa::cmd_ablate(cfg);
    if (inspect->parsed()) return pdsa::cmd_inspect(cfg, st.input);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
