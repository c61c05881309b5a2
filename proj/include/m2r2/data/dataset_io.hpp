#pragma once

#include <filesystem>
#include <iosfwd>

#include "m2r2/data/dataset.hpp"

namespace m2r2::data {

// JSON-lines layout. Line 1 is a header:
//   {"dims": {"audio": int, "text": int, "visual": int}, "classes": [str]}
// Every following line is one conversation:
//   {"id": str, "num_parties": int, "utterances": [{"t": int, "speaker": int,
//    "label": int, "audio": [f64]|null, "text": [f64]|null, "visual": [f64]|null}]}

Dataset read_dataset(std::istream& in);
void write_dataset(const Dataset& dataset, std::ostream& out);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace m2r2::data
