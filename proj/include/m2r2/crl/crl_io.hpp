#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "m2r2/crl/crl.hpp"
#include "m2r2/numerics/checkpoint.hpp"

namespace m2r2::crl {

inline constexpr const char* kCheckpointFormat = "m2r2.crl";

nlohmann::ordered_json config_to_json(const CrlConfig& config);
/// Missing keys keep the values already in `base`; unknown keys are rejected.
CrlConfig config_from_json(const nlohmann::ordered_json& j, CrlConfig base = {});

struct EmbeddingRow {
    std::string conversation_id;
    std::size_t turn = 0;
    std::size_t label = 0;
    std::vector<double> h;
};

/// Flattens per-conversation tables into rows; ids/labels come from the dataset.
std::vector<EmbeddingRow> embedding_rows(const data::Dataset& dataset, const std::vector<Tensor>& tables);
/// CSV with header conversation_id,turn,label,h_0..h_{D-1}.
void write_embeddings_csv(const std::vector<EmbeddingRow>& rows, std::ostream& out);
void save_embeddings_csv(const std::vector<EmbeddingRow>& rows, const std::filesystem::path& path);

/// Network weights, normalization statistics, representation tables and
/// centroids. Optimizer moments are not stored.
Checkpoint to_checkpoint(CrlState& state);
CrlState from_checkpoint(const Checkpoint& ckpt);
void save_crl(CrlState& state, const std::filesystem::path& path);
CrlState load_crl(const std::filesystem::path& path);

}  // namespace m2r2::crl
