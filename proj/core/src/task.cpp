#include "dift/task.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "dift/random.hpp"

namespace dift {

void TaskSpec::validate() const {
  require(vocab_size >= 8, "TaskSpec: vocab_size must be at least 8");
  require(seq_len >= 4, "TaskSpec: seq_len must be at least 4");
  require(n_pairs >= 1, "TaskSpec: n_pairs must be positive");
  require(n_queries >= 1 && n_queries <= n_pairs,
          "TaskSpec: n_queries must lie in [1, n_pairs]");
  require(ngram >= 1, "TaskSpec: ngram must be positive");
  for (double d : answer_depths)
    require(d >= 0.0 && d <= 1.0, "TaskSpec: answer depths must lie in [0,1]");
  require(!answer_depths.empty(), "TaskSpec: at least one answer depth required");
}

std::vector<std::uint8_t> ar_hit_mask(const std::vector<int>& tokens, int ngram) {
  require(ngram >= 1, "ar_hit_mask: ngram must be positive");
  const std::size_t n = tokens.size();
  std::vector<std::uint8_t> mask(n, 0);
  if (n == 0) return mask;
  // single pass over n-gram end positions; an end position is a hit when the
  // same n-gram already ended strictly earlier
  std::map<std::vector<int>, std::size_t> seen;
  std::vector<int> gram(static_cast<std::size_t>(ngram));
  for (std::size_t t = static_cast<std::size_t>(ngram) - 1; t < n; ++t) {
    for (int j = 0; j < ngram; ++j)
      gram[static_cast<std::size_t>(j)] = tokens[t - static_cast<std::size_t>(ngram) + 1 + j];
    auto it = seen.find(gram);
    if (it != seen.end())
      mask[t] = 1;
    else
      seen.emplace(gram, t);
  }
  return mask;
}

std::vector<ArSample> gen_assoc_recall(const TaskSpec& spec, std::uint64_t seed,
                                       std::size_t count) {
  spec.validate();
  require(spec.kind == TaskKind::assoc_recall, "gen_assoc_recall: spec kind mismatch");
  // keys occupy the lower half of the vocabulary, values the upper half
  const int n_keys = spec.vocab_size / 2;
  const int n_values = spec.vocab_size - n_keys;
  require(spec.n_pairs <= n_keys,
          "gen_assoc_recall: n_pairs exceeds the key range (vocab_size / 2)");
  require(2 * spec.n_pairs + 2 <= spec.seq_len,
          "gen_assoc_recall: seq_len too short for n_pairs plus one re-query");
  require(spec.seq_len % 2 == 0, "gen_assoc_recall: seq_len must be even (key/value pairs)");

  std::vector<ArSample> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Rng rng(Rng::split(seed, s));
    ArSample sample;
    sample.tokens.reserve(static_cast<std::size_t>(spec.seq_len));

    // draw n_pairs distinct keys, each with an arbitrary value
    std::vector<int> keys(static_cast<std::size_t>(n_keys));
    for (int i = 0; i < n_keys; ++i) keys[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < spec.n_pairs; ++i) {
      const std::size_t j =
          static_cast<std::size_t>(i) + rng.uniform_int(static_cast<std::uint64_t>(n_keys - i));
      std::swap(keys[static_cast<std::size_t>(i)], keys[j]);
    }
    std::vector<int> values(static_cast<std::size_t>(spec.n_pairs));
    for (auto& v : values) v = n_keys + static_cast<int>(rng.uniform_int(n_values));

    for (int i = 0; i < spec.n_pairs; ++i) {
      sample.tokens.push_back(keys[static_cast<std::size_t>(i)]);
      sample.tokens.push_back(values[static_cast<std::size_t>(i)]);
    }
    // the remainder of the sequence re-queries earlier pairs
    while (sample.tokens.size() + 2 <= static_cast<std::size_t>(spec.seq_len)) {
      const std::size_t i = rng.uniform_int(static_cast<std::uint64_t>(spec.n_pairs));
      sample.tokens.push_back(keys[i]);
      sample.tokens.push_back(values[i]);
    }
    sample.ar_hit = ar_hit_mask(sample.tokens, spec.ngram);
    out.push_back(std::move(sample));
  }
  return out;
}

NeedleVocab NeedleVocab::layout(int vocab_size) {
  require(vocab_size >= 16, "NeedleVocab: vocab_size must be at least 16 for the needle task");
  NeedleVocab v;
  v.bos = 0;
  v.query_mark = 1;
  const int quarter = (vocab_size - 2) / 4;
  v.key_begin = 2;
  v.key_end = v.key_begin + quarter;
  v.value_begin = v.key_end;
  v.value_end = v.value_begin + quarter;
  v.filler_begin = v.value_end;
  v.filler_end = vocab_size;
  return v;
}

std::vector<NeedleSample> gen_needle(const TaskSpec& spec, std::uint64_t seed,
                                     std::size_t count_per_depth) {
  spec.validate();
  require(spec.kind == TaskKind::needle, "gen_needle: spec kind mismatch");
  const NeedleVocab voc = NeedleVocab::layout(spec.vocab_size);
  const int n_keys = voc.key_end - voc.key_begin;
  const int n_values = voc.value_end - voc.value_begin;
  require(spec.n_pairs <= n_keys, "gen_needle: n_pairs exceeds the reserved key range");

  // [BOS][context][QUERY k v] * R
  const std::size_t query_block = 3;
  const std::size_t overhead = 1 + query_block * static_cast<std::size_t>(spec.n_queries);
  require(static_cast<std::size_t>(spec.seq_len) > overhead + 2,
          "gen_needle: seq_len leaves no room for context");
  const std::size_t ctx_len = static_cast<std::size_t>(spec.seq_len) - overhead;
  require(ctx_len >= 2 * static_cast<std::size_t>(spec.n_pairs),
          "gen_needle: context cannot hold all needles without collision");

  std::vector<NeedleSample> out;
  out.reserve(spec.answer_depths.size() * count_per_depth);
  std::size_t sample_index = 0;
  for (double depth : spec.answer_depths) {
    for (std::size_t s = 0; s < count_per_depth; ++s, ++sample_index) {
      Rng rng(Rng::split(seed, sample_index));
      NeedleSample smp;
      smp.depth = depth;
      smp.context_begin = 1;
      smp.context_end = 1 + ctx_len;

      // distinct keys; values arbitrary within the value range
      std::vector<int> keys(static_cast<std::size_t>(n_keys));
      for (int i = 0; i < n_keys; ++i) keys[static_cast<std::size_t>(i)] = voc.key_begin + i;
      for (int i = 0; i < spec.n_pairs; ++i) {
        const std::size_t j =
            static_cast<std::size_t>(i) + rng.uniform_int(static_cast<std::uint64_t>(n_keys - i));
        std::swap(keys[static_cast<std::size_t>(i)], keys[j]);
      }
      for (int i = 0; i < spec.n_pairs; ++i)
        smp.needles.emplace_back(keys[static_cast<std::size_t>(i)],
                                 voc.value_begin + static_cast<int>(rng.uniform_int(n_values)));

      // answer needle at the requested depth, distractors at random
      // non-overlapping slots
      const std::size_t last_slot = ctx_len - 2;  // key position within the context
      std::vector<std::size_t> pos(static_cast<std::size_t>(spec.n_pairs));
      pos[0] = static_cast<std::size_t>(std::llround(depth * static_cast<double>(last_slot)));
      std::set<std::size_t> occupied{pos[0], pos[0] + 1};
      const std::size_t max_attempts = 64 * static_cast<std::size_t>(spec.n_pairs) + 256;
      std::size_t attempts = 0;
      for (int i = 1; i < spec.n_pairs; ++i) {
        for (;;) {
          require(attempts++ < max_attempts,
                  "gen_needle: could not place needles without collision at these sizes");
          const std::size_t p = rng.uniform_int(last_slot + 1);
          if (!occupied.count(p) && !occupied.count(p + 1)) {
            pos[static_cast<std::size_t>(i)] = p;
            occupied.insert(p);
            occupied.insert(p + 1);
            break;
          }
        }
      }

      // uniform filler, then overwrite needle slots
      smp.tokens.assign(static_cast<std::size_t>(spec.seq_len), voc.bos);
      const int n_filler = voc.filler_end - voc.filler_begin;
      for (std::size_t t = smp.context_begin; t < smp.context_end; ++t)
        smp.tokens[t] = voc.filler_begin + static_cast<int>(rng.uniform_int(n_filler));
      smp.needle_positions.resize(static_cast<std::size_t>(spec.n_pairs));
      for (int i = 0; i < spec.n_pairs; ++i) {
        const std::size_t at = smp.context_begin + pos[static_cast<std::size_t>(i)];
        smp.needle_positions[static_cast<std::size_t>(i)] = at;
        smp.tokens[at] = smp.needles[static_cast<std::size_t>(i)].first;
        smp.tokens[at + 1] = smp.needles[static_cast<std::size_t>(i)].second;
      }

      // query section: the answer needle first, then distinct distractors
      std::vector<std::size_t> query_ids{0};
      if (spec.n_queries > 1) {
        std::vector<std::size_t> others;
        for (int i = 1; i < spec.n_pairs; ++i) others.push_back(static_cast<std::size_t>(i));
        for (int i = 0; i < spec.n_queries - 1; ++i) {
          const std::size_t j =
              static_cast<std::size_t>(i) + rng.uniform_int(others.size() - static_cast<std::size_t>(i));
          std::swap(others[static_cast<std::size_t>(i)], others[j]);
          query_ids.push_back(others[static_cast<std::size_t>(i)]);
        }
      }
      std::size_t qt = smp.context_end;
      for (std::size_t qi : query_ids) {
        smp.tokens[qt] = voc.query_mark;
        smp.tokens[qt + 1] = smp.needles[qi].first;
        smp.tokens[qt + 2] = smp.needles[qi].second;
        smp.answer_positions.push_back(qt + 2);
        smp.answer_values.push_back(smp.needles[qi].second);
        qt += query_block;
      }
      out.push_back(std::move(smp));
    }
  }
  return out;
}

}  // namespace dift
