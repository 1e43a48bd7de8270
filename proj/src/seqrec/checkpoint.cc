#include "popalign/seqrec/checkpoint.h"

#include "popalign/common/container.h"
#include "popalign/common/error.h"

namespace popalign::seqrec {

void SaveCheckpoint(const ModelParams<float>& params, const std::string& path,
                    const nlohmann::json& meta) {
  Container c;
  c.kind = "checkpoint";
  c.meta = meta.is_object() ? meta : nlohmann::json::object();
  c.meta["model"] = params.config.ToJson();
  params.ForEachTensor([&c](const std::string& name, const Matrix<float>& m) {
    NamedTensor t;
    t.name = name;
    t.rows = m.rows();
    t.cols = m.cols();
    t.data.assign(m.data(), m.data() + m.size());
    c.tensors.push_back(std::move(t));
  });
  WriteContainer(path, c);
}

ModelParams<float> LoadCheckpoint(const std::string& path, const std::optional<ModelConfig>& expected,
                                  nlohmann::json* meta) {
  const Container c = ReadContainer(path);
  if (c.kind != "checkpoint") {
    throw FormatError(path + ": expected a checkpoint, found kind '" + c.kind + "'");
  }
  if (!c.meta.contains("model")) throw FormatError(path + ": checkpoint has no model config");
  ModelConfig config;
  try {
    config = ModelConfig::FromJson(c.meta.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad model config: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path + ": bad model config: " + e.what());
  }
  if (expected) {
    const auto& x = *expected;
    if (x.num_blocks != config.num_blocks || x.dim != config.dim || x.max_len != config.max_len ||
        x.catalog_size != config.catalog_size || x.ffn_width() != config.ffn_width() ||
        x.heads != config.heads) {
      throw FormatError(path + ": checkpoint shape " + config.ToJson().dump() +
                        " does not match expected " + x.ToJson().dump());
    }
  }
  ModelParams<float> params = ModelParams<float>::Zeros(config);
  params.ForEachTensor([&](const std::string& name, Matrix<float>& m) {
    if (!c.Contains(name)) throw FormatError(path + ": missing tensor " + name);
    const NamedTensor& t = c.Get(name);
    if (t.rows != m.rows() || t.cols != m.cols()) {
      throw FormatError(path + ": tensor " + name + " has shape " + std::to_string(t.rows) + "x" +
                        std::to_string(t.cols) + ", expected " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()));
    }
    std::copy(t.data.begin(), t.data.end(), m.data());
  });
  if (meta) *meta = c.meta;
  return params;
}

}  // namespace popalign::seqrec
