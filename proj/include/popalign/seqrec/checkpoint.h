#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "popalign/seqrec/model.h"

namespace popalign::seqrec {

// Writes a container of kind "checkpoint" with the config echoed in the
// header. `meta` is stored verbatim (config hash, seed, ...).
void SaveCheckpoint(const ModelParams<float>& params, const std::string& path,
                    const nlohmann::json& meta = nlohmann::json::object());

// Throws FormatError on corruption, version mismatch, or when `expected`
// is given and the stored shapes disagree with it.
ModelParams<float> LoadCheckpoint(const std::string& path,
                                  const std::optional<ModelConfig>& expected = std::nullopt,
                                  nlohmann::json* meta = nullptr);

}  // namespace popalign::seqrec
