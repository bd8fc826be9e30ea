#pragma once

// Binary parameter container shared by the summarisation model and the
// coherence classifier.
//
// Layout (little endian):
//   "CISUMCKP" | u32 version | u64 meta_len | meta JSON
//   | u64 n_tensors | n x (u32 name_len | name | u64 rows | u64 cols | rows*cols f64)

#include <deque>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cisum/autograd.hpp"
#include "cisum/data.hpp"
#include "cisum/model.hpp"

namespace cisum {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::deque<ag::Parameter>& params);
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Copies tensors into same-named parameters. Every parameter must be present
// with its exact shape and no extra tensors may remain; throws ConfigError.
void assign_parameters(std::deque<ag::Parameter>& params, const CheckpointData& data);

struct LoadedModel {
  std::unique_ptr<model::CisumModel> model;
  Vocab vocab;
  Tokenizer tokenizer;
};

void save_model(const std::filesystem::path& path, const model::CisumModel& m, const Vocab& vocab,
                const Tokenizer& tokenizer);
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace cisum
