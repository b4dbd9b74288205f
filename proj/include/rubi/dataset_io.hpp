#pragma once

#include "rubi/datagen.hpp"

#include <filesystem>
#include <string>

namespace rubi {

/// File names inside a dataset directory.
inline constexpr const char* kSidecarFile = "dataset.json";
std::string split_file(Split s); // "train.jsonl", ...

/// Writes one JSON-lines file per split plus the sidecar (spec, priors,
/// vocabulary, answers). Output bytes depend only on the corpus.
void write_dataset(const Corpus& corpus, const std::filesystem::path& dir);

/// Inverse of write_dataset; values round-trip bitwise. Throws
/// std::runtime_error on missing files and malformed records.
Corpus read_dataset(const std::filesystem::path& dir);

bool dataset_exists(const std::filesystem::path& dir);

} // namespace rubi
