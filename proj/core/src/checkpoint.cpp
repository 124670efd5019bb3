#include "dfmed/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace dfmed {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json flow_config_json(const FlowConfig& c) {
  return ordered_json{{"dim", c.dim},
                      {"gat_heads", c.gat_heads},
                      {"ctx_layers", c.ctx_layers},
                      {"ctx_heads", c.ctx_heads},
                      {"max_ctx", c.max_ctx},
                      {"negatives", c.negatives},
                      {"topk", c.topk},
                      {"lambda_e", c.lambda_e},
                      {"lambda_a", c.lambda_a},
                      {"act_flow", c.act_flow},
                      {"entity_flow", c.entity_flow},
                      {"interweave_e2a", c.interweave_e2a},
                      {"interweave_a2e", c.interweave_a2e}};
}

FlowConfig flow_config_from(const ordered_json& j) {
  FlowConfig c;
  c.dim = j.at("dim").get<int>();
  c.gat_heads = j.at("gat_heads").get<int>();
  c.ctx_layers = j.at("ctx_layers").get<int>();
  c.ctx_heads = j.at("ctx_heads").get<int>();
  c.max_ctx = j.at("max_ctx").get<int>();
  c.negatives = j.at("negatives").get<int>();
  c.topk = j.at("topk").get<int>();
  c.lambda_e = j.at("lambda_e").get<double>();
  c.lambda_a = j.at("lambda_a").get<double>();
  c.act_flow = j.at("act_flow").get<bool>();
  c.entity_flow = j.at("entity_flow").get<bool>();
  c.interweave_e2a = j.at("interweave_e2a").get<bool>();
  c.interweave_a2e = j.at("interweave_a2e").get<bool>();
  return c;
}

ordered_json gen_config_json(const GenConfig& c) {
  return ordered_json{{"dim", c.dim},         {"layers", c.layers},
                      {"heads", c.heads},     {"max_ctx", c.max_ctx},
                      {"max_gen_len", c.max_gen_len}, {"beam", c.beam},
                      {"use_guidance", c.use_guidance}};
}

GenConfig gen_config_from(const ordered_json& j) {
  GenConfig c;
  c.dim = j.at("dim").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.max_ctx = j.at("max_ctx").get<int>();
  c.max_gen_len = j.at("max_gen_len").get<int>();
  c.beam = j.at("beam").get<int>();
  c.use_guidance = j.at("use_guidance").get<bool>();
  return c;
}

void write_files(const std::string& prefix, ordered_json manifest, const ParamStore& params) {
  std::vector<float> blob;
  manifest["params"] = ordered_json::array();
  for (const auto& [name, t] : params.items()) {
    ordered_json p;
    p["name"] = name;
    p["shape"] = {t.rows(), t.cols()};
    p["dtype"] = "f32";
    p["offset"] = blob.size() * sizeof(float);
    manifest["params"].push_back(std::move(p));
    for (double v : t.values()) blob.push_back(static_cast<float>(v));
  }
  manifest["blob_bytes"] = blob.size() * sizeof(float);

  std::ofstream mj(prefix + ".json");
  if (!mj) throw std::runtime_error("cannot write checkpoint manifest: " + prefix + ".json");
  mj << manifest.dump(2) << "\n";

  std::ofstream mb(prefix + ".bin", std::ios::binary);
  if (!mb) throw std::runtime_error("cannot write checkpoint blob: " + prefix + ".bin");
  mb.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size() * sizeof(float)));
}

ordered_json read_manifest(const std::string& prefix, const std::string& expected_kind) {
  std::ifstream in(prefix + ".json");
  if (!in) throw std::runtime_error("cannot open checkpoint manifest: " + prefix + ".json");
  ordered_json j = ordered_json::parse(in);
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("checkpoint " + prefix + ": unsupported version");
  if (j.at("kind").get<std::string>() != expected_kind)
    throw std::runtime_error("checkpoint " + prefix + ": kind is '" +
                             j.at("kind").get<std::string>() + "', expected '" + expected_kind +
                             "'");
  return j;
}

void load_params(const std::string& prefix, const ordered_json& manifest, ParamStore& params) {
  std::ifstream in(prefix + ".bin", std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint blob: " + prefix + ".bin");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() != manifest.at("blob_bytes").get<std::size_t>())
    throw std::runtime_error("checkpoint " + prefix + ": blob size mismatch");

  for (const auto& p : manifest.at("params")) {
    std::string name = p.at("name").get<std::string>();
    if (p.at("dtype").get<std::string>() != "f32")
      throw std::runtime_error("checkpoint " + prefix + ": unsupported dtype");
    int rows = p.at("shape")[0].get<int>();
    int cols = p.at("shape")[1].get<int>();
    std::size_t offset = p.at("offset").get<std::size_t>();
    std::size_t count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (offset + count * sizeof(float) > bytes.size())
      throw std::runtime_error("checkpoint " + prefix + ": blob overrun for " + name);
    if (!params.contains(name))
      throw std::runtime_error("checkpoint " + prefix + ": unknown parameter " + name);
    Tensor t = params.get(name);
    if (t.rows() != rows || t.cols() != cols)
      throw std::runtime_error("checkpoint " + prefix + ": shape mismatch for " + name);
    const float* f = reinterpret_cast<const float*>(bytes.data() + offset);
    auto& dst = t.values_mut();
    for (std::size_t i = 0; i < count; ++i) dst[i] = static_cast<double>(f[i]);
  }
}

}  // namespace

void save_flow_checkpoint(const FlowModel& model, const std::string& prefix) {
  ordered_json j;
  j["version"] = 1;
  j["kind"] = "flow";
  j["config"] = flow_config_json(model.config());
  j["vocab"] = model.vocab().tokens();
  j["thresholds"] = model.thresholds();
  write_files(prefix, std::move(j), model.params());
}

std::unique_ptr<FlowModel> load_flow_checkpoint(const std::string& prefix,
                                                const KnowledgeGraph& kg) {
  ordered_json j = read_manifest(prefix, "flow");
  FlowConfig cfg = flow_config_from(j.at("config"));
  Vocab vocab = Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>());
  auto model = std::make_unique<FlowModel>(cfg, vocab, kg, 0);
  load_params(prefix, j, model->params());
  auto taus = j.at("thresholds").get<std::vector<double>>();
  if (taus.size() != kNumActs)
    throw std::runtime_error("checkpoint " + prefix + ": bad threshold count");
  for (int i = 0; i < kNumActs; ++i)
    model->thresholds()[static_cast<std::size_t>(i)] = taus[static_cast<std::size_t>(i)];
  return model;
}

void save_gen_checkpoint(const GenModel& model, const std::string& prefix) {
  ordered_json j;
  j["version"] = 1;
  j["kind"] = "generator";
  j["config"] = gen_config_json(model.config());
  j["vocab"] = model.vocab().tokens();
  write_files(prefix, std::move(j), model.params());
}

std::unique_ptr<GenModel> load_gen_checkpoint(const std::string& prefix,
                                              const KnowledgeGraph& kg) {
  ordered_json j = read_manifest(prefix, "generator");
  GenConfig cfg = gen_config_from(j.at("config"));
  Vocab vocab = Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>());
  auto model = std::make_unique<GenModel>(cfg, vocab, kg, 0);
  load_params(prefix, j, model->params());
  return model;
}

std::string flow_config_to_json(const FlowConfig& cfg) { return flow_config_json(cfg).dump(2); }
FlowConfig flow_config_from_json(const std::string& text) {
  return flow_config_from(ordered_json::parse(text));
}
std::string gen_config_to_json(const GenConfig& cfg) { return gen_config_json(cfg).dump(2); }
GenConfig gen_config_from_json(const std::string& text) {
  return gen_config_from(ordered_json::parse(text));
}

}  // namespace dfmed
