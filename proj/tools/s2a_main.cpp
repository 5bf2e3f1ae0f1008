// Command-line front end; all real work happens behind the C API.
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "s2a/s2a_c.h"

int main(int argc, char** argv) {
  CLI::App app{"Hyperspectral decoupled two-stream detection pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  long long seed = -1;

  const char* commands[] = {"decouple", "bandselect", "pca",  "split",    "generate",
                            "train",    "detect",     "eval", "gradcheck"};
  const char* descriptions[] = {
      "Produce SA/SE image pairs from hyperspectral cubes",
      "Report optimal band partitions per cube",
      "Report principal-component variances per cube",
      "Write train/val/test manifests",
      "Generate the seeded synthetic corpus",
      "Train the detector",
      "Run detection and write overlays",
      "Score detections against annotations",
      "Run the finite-difference gradient suite"};

  std::string chosen;
  for (int i = 0; i < 9; ++i) {
    CLI::App* sub = app.add_subcommand(commands[i], descriptions[i]);
    sub->add_option("--config", config_path, "Path to a key = value config file");
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", out_dir, "Override the output directory");
    sub->callback([&chosen, name = std::string(commands[i])] { chosen = name; });
  }

  CLI11_PARSE(app, argc, argv);

  s2a_config* cfg = nullptr;
  int status = config_path.empty() ? ((cfg = s2a_config_new()) ? S2A_OK : S2A_ERR_VALIDATION)
                                   : s2a_config_load(config_path.c_str(), &cfg);
  if (status == S2A_OK && seed >= 0)
    status = s2a_config_set(cfg, "seed", std::to_string(seed).c_str());
  if (status == S2A_OK && !out_dir.empty())
    status = s2a_config_set(cfg, "out_dir", out_dir.c_str());
  if (status == S2A_OK) status = s2a_run(cfg, chosen.c_str());

  if (status != S2A_OK) std::fprintf(stderr, "error: %s\n", s2a_last_error());
  s2a_config_free(cfg);
  return status;
}
