#pragma once

#include <filesystem>

#include "m2r2/numerics/checkpoint.hpp"
#include "m2r2/panet/panet.hpp"

namespace m2r2::panet {

inline constexpr const char* kCheckpointFormat = "m2r2.panet";

Checkpoint to_checkpoint(PanetParams& params);
PanetParams from_checkpoint(const Checkpoint& ckpt);

void save_panet(PanetParams& params, const std::filesystem::path& path);
PanetParams load_panet(const std::filesystem::path& path);

nlohmann::ordered_json dims_to_json(const PanetDims& dims);
PanetDims dims_from_json(const nlohmann::ordered_json& j);

}  // namespace m2r2::panet
