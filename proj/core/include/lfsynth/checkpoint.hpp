#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "lfsynth/networks.hpp"
#include "lfsynth/optim.hpp"

namespace lfsynth {

struct CheckpointMeta {
  std::size_t iteration = 0;
  double loss = 0.0;
  // Position of the training sampler, so a resumed run draws the same
  // examples as an uninterrupted one.
  std::uint64_t sampler_counter = 0;
};

struct Checkpoint {
  ModelWeights<float> weights;
  AdamState<float> adam;
  CheckpointMeta meta;
};

// Container layout: 8-byte magic "LFSCKPT1", uint64 little-endian index
// length, a JSON index {"meta": {...}, "tensors": {name: {dtype, shape,
// offset}}}, then raw little-endian float32 blocks. Offsets are relative to
// the first byte after the index. Tensor names are parameter paths plus
// "bn/<layer>/mean", "bn/<layer>/var", "adam/m/<param>" and "adam/v/<param>".
//
// The file is written to a sibling temporary and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const ModelWeights<float>& weights,
                     const AdamState<float>& adam = {}, const CheckpointMeta& meta = {});

// Rebuilds the model from the recorded kind and checks every tensor against
// the architecture. Throws LoadError on any mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lfsynth
