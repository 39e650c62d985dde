#pragma once

#include <cstdint>
#include <string>

#include "chainqa/common.hpp"

namespace chainqa {

enum class FilterMode : std::uint32_t { none = 0, answer = 1, answer_reader = 2 };
enum class PositiveSelection : std::uint32_t { top1 = 0, sample_topk = 1 };
enum class InitMode : std::uint32_t { lexical_warmstart = 0, random = 1 };

FilterMode parse_filter_mode(const std::string& s);
std::string to_string(FilterMode m);
PositiveSelection parse_positive_selection(const std::string& s);
std::string to_string(PositiveSelection s);
InitMode parse_init_mode(const std::string& s);
std::string to_string(InitMode m);

struct EmConfig {
  int iterations = 8;
  std::size_t k_estep = 10;  // E-step retrieval depth
  FilterMode filter_mode = FilterMode::answer_reader;
  PositiveSelection positive_selection = PositiveSelection::top1;
  std::size_t negatives_per_question = 1;  // mined; in-batch negatives come on top
  InitMode init_mode = InitMode::lexical_warmstart;
  std::size_t reader_bootstrap_k = 50;
  int reader_bootstrap_epochs = 2;
  int epochs_per_mstep = 1;
  std::uint64_t seed = 42;

  int n_hops = 2;
  std::size_t dim = 64;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t eval_k = 10;

  std::size_t warmstart_lexical_topk = 20;
  int warmstart_epochs = 2;

  bool answer_match_final_hop_only = false;
  bool gold_only = false;  // keep only examples whose mined positive equals gold
  bool reader_share_embeddings = false;

  bool early_stop = true;  // stop when dev chain recall stalls
  double early_stop_min_delta = 0.005;
  int early_stop_patience = 2;
};

}  // namespace chainqa
