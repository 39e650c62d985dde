#pragma once

#include <cstdint>
#include <filesystem>

#include "chainqa/data.hpp"
#include "chainqa/em_config.hpp"
#include "chainqa/encoder.hpp"
#include "chainqa/reader.hpp"

namespace chainqa {

/// Everything needed to continue a run exactly: parameters, optimizer
/// moments, vocabulary, config, the master seed (per-iteration streams are
/// derived from it) and the last completed iteration. Round-trips bitwise.
struct Checkpoint {
  Vocabulary vocab;
  EncoderParams enc;
  OptState enc_opt;
  ReaderParams reader;
  ReaderOptState reader_opt;
  EmConfig em;
  std::uint64_t seed = 0;
  std::int32_t iteration = 0;  // last completed EM iteration (0 = initialized only)
  bool reader_bootstrapped = false;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp);

/// Refuses unknown format versions; a trailing checksum catches truncation
/// and corruption.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace chainqa
