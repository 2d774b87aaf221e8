#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ir2net/config.hpp"
#include "ir2net/model.hpp"
#include "ir2net/optim.hpp"

// Binary checkpoint, all integers little-endian:
//   "IR2N" | u32 version | str header notes | str config | u32 epoch |
//   u64 optimizer steps | str optimizer kind | str rng state |
//   u32 tensor count | tensors...
// str = u32 length + bytes. tensor = str name | u8 dtype | u8 ndim |
//   u64 dims[ndim] | raw data. Model tensors come first in model order,
//   then optimizer slots prefixed "optim." in name order.

namespace ir2net::harness {

constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  TrainConfig config;
  std::unique_ptr<model::Model> model;
  std::unique_ptr<Optimizer> optimizer;
  int epoch = 0;
  std::mt19937_64 rng;
  std::string header;
};

std::vector<std::uint8_t> encode_checkpoint(const TrainConfig& cfg, model::Model& model, const Optimizer* optimizer,
                                            int epoch, const std::mt19937_64& rng);

LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const TrainConfig& cfg, model::Model& model,
                     const Optimizer* optimizer, int epoch, const std::mt19937_64& rng);
LoadedCheckpoint load_checkpoint(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace ir2net::harness
