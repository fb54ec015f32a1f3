#pragma once

// Versioned binary model checkpoints.
//
// Layout:
//   bytes 0-7    magic "MDDAFRM1"
//   bytes 8-15   little-endian u64 header length
//   header       UTF-8 "key value" lines: the full model config, optimizer
//                hyper-parameters/step, then one "tensor <name> N C H W"
//                manifest line per array in file order
//   payload      raw little-endian float32 arrays in manifest order
//
// Optimizer moment buffers ride along as "<param>.adam_m" / "<param>.adam_v"
// entries. Loading rebuilds the model from the embedded config and validates
// every manifest shape against it.

#include <string>

#include "mdda/network.hpp"
#include "mdda/train.hpp"

namespace mdda {

inline constexpr char kCheckpointMagic[8] = {'M', 'D', 'D', 'A', 'F', 'R', 'M', '1'};

struct LoadedCheckpoint {
    Model<float> model;
    AdamW<float> opt;
};

void save_checkpoint(const Model<float>& m, const AdamW<float>& opt, const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace mdda
