#pragma once

#include <memory>
#include <string>

#include "dfmed/dualflow.hpp"
#include "dfmed/generator.hpp"

namespace dfmed {

/// Checkpoints are a pair of files: `<prefix>.json` (versioned manifest with
/// the model config, vocabulary, thresholds, and per-parameter name/shape/
/// dtype/byte-offset entries) and `<prefix>.bin` (little-endian raw f32).

void save_flow_checkpoint(const FlowModel& model, const std::string& prefix);
std::unique_ptr<FlowModel> load_flow_checkpoint(const std::string& prefix,
                                                const KnowledgeGraph& kg);

void save_gen_checkpoint(const GenModel& model, const std::string& prefix);
std::unique_ptr<GenModel> load_gen_checkpoint(const std::string& prefix,
                                              const KnowledgeGraph& kg);

/// Config (de)serialization shared with the CLI config file.
std::string flow_config_to_json(const FlowConfig& cfg);
FlowConfig flow_config_from_json(const std::string& text);
std::string gen_config_to_json(const GenConfig& cfg);
GenConfig gen_config_from_json(const std::string& text);

}  // namespace dfmed
