#pragma once

// Checkpoint container (little-endian binary):
//   magic "NDLCKPT1", u32 JSON header length, JSON header, then every tensor
//   as raw IEEE-754 doubles in header order.
// The header records the model configuration and, per tensor, its name and
// shape. Normalization statistics travel as the 1x2 tensors "norm.mean" and
// "norm.std". Round trips are bit-exact.

#include <filesystem>
#include <span>

#include "needle/train.hpp"

namespace needle::checkpoint {

/// Thrown for truncated, corrupt or inconsistent checkpoint files.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save(const std::filesystem::path& path, const train::Classifier& classifier);
train::Classifier load(const std::filesystem::path& path);

/// Bitwise equality of configuration, tensors and normalization.
bool identical(const train::Classifier& a, const train::Classifier& b);

/// `epoch,train_loss,val_loss`; a missing validation loss is left empty.
void write_loss_curve(const std::filesystem::path& path, std::span<const train::EpochRecord> curve);

}  // namespace needle::checkpoint
