#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dift/common.hpp"

namespace dift {

enum class TaskKind { assoc_recall, needle };

/// Generator parameters for the synthetic corpora. Generation is a pure
/// function of (spec, seed): the same pair reproduces every byte.
struct TaskSpec {
  TaskKind kind = TaskKind::assoc_recall;
  int vocab_size = 64;
  int seq_len = 128;
  int n_pairs = 8;    // key-value pairs (assoc recall) / needles (needle task)
  int n_queries = 4;  // re-queries per sequence / query cities
  std::vector<double> answer_depths = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::uint64_t seed = 7;
  int ngram = 2;  // AR-Hit n-gram order

  void validate() const;
};

/// One associative-recall sequence. ar_hit[t] marks target positions whose
/// trailing n-gram occurred earlier in the sequence.
struct ArSample {
  std::vector<int> tokens;
  std::vector<std::uint8_t> ar_hit;
};

/// One needle-retrieval sample. tokens = [BOS, context, query section]; the
/// context is uniform filler with (key, value) needle pairs embedded, the
/// query section holds R blocks of [QUERY, key, value].
struct NeedleSample {
  std::vector<int> tokens;
  std::vector<std::pair<int, int>> needles;     // (key, value) token ids; [0] is the answer needle
  std::vector<std::size_t> needle_positions;    // key-token position of each needle
  std::vector<std::size_t> answer_positions;    // value-token position of each query block
  std::vector<int> answer_values;               // ground-truth value per query
  std::size_t context_begin = 0, context_end = 0;  // [begin, end) spans the filler+needle region
  double depth = 0.0;
};

/// Reserved token ranges for the needle task. Filler draws uniformly from
/// what remains of the vocabulary.
struct NeedleVocab {
  int bos = 0;
  int query_mark = 1;
  int key_begin = 0, key_end = 0;
  int value_begin = 0, value_end = 0;
  int filler_begin = 0, filler_end = 0;

  static NeedleVocab layout(int vocab_size);
};

std::vector<ArSample> gen_assoc_recall(const TaskSpec& spec, std::uint64_t seed,
                                       std::size_t count);

/// count samples per requested depth, depth-major order.
std::vector<NeedleSample> gen_needle(const TaskSpec& spec, std::uint64_t seed,
                                     std::size_t count_per_depth);

/// AR-Hit positions for an arbitrary token sequence: t is marked when the
/// n-gram ending at t also ends at some earlier position.
std::vector<std::uint8_t> ar_hit_mask(const std::vector<int>& tokens, int ngram);

}  // namespace dift
