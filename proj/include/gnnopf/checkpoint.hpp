#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "gnnopf/graph_signal.hpp"
#include "gnnopf/models.hpp"
#include "gnnopf/training.hpp"

namespace gnnopf {

/// Everything needed to run or evaluate a trained model: spec, tensors,
/// standardization, the GSO it was trained with and the training settings
/// (which also pin the train/test split of its dataset).
struct Checkpoint {
  ModelSpec spec;
  ModelParams params;
  Standardizer stats;
  Gso gso;
  TrainConfig train;
  std::string case_id;
  std::uint64_t dataset_seed = 0;
  std::uint64_t dataset_size = 0;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError for foreign, truncated, corrupted or newer files.
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws ContractError unless the checkpoint was trained on a dataset with
/// this case, seed and size.
void check_compatible(const Checkpoint& ckpt, const Dataset& dataset);

}  // namespace gnnopf
