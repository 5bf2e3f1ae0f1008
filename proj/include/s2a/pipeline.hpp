#pragma once

#include <string>

#include "s2a/config.hpp"

namespace s2a {

// Each command reads its inputs under cfg.data_dir and writes results under
// cfg.resolved_out_dir() using the fixed layout:
//   cubes/ annotations/ images/ splits/ checkpoints/ detections/ overlays/
//   metrics/
// Errors are reported by throwing (ValidationError / NumericError / IoError).

void cmd_generate(const PipelineConfig& cfg);
void cmd_decouple(const PipelineConfig& cfg);
void cmd_bandselect(const PipelineConfig& cfg);
void cmd_pca(const PipelineConfig& cfg);
void cmd_split(const PipelineConfig& cfg);
void cmd_train(const PipelineConfig& cfg);
void cmd_detect(const PipelineConfig& cfg);
void cmd_eval(const PipelineConfig& cfg);
void cmd_gradcheck(const PipelineConfig& cfg);

/// Dispatches by subcommand name; throws ValidationError on unknown names.
void run_command(const std::string& name, const PipelineConfig& cfg);

}  // namespace s2a
