#include "dift/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace dift {

namespace {

void check_spans(const std::vector<ColumnSpan>& spans, std::size_t width, const char* what) {
  for (const auto& s : spans) {
    require(s.begin < s.end, std::string(what) + ": empty or inverted span");
    require(s.end <= width, std::string(what) + ": span exceeds row width");
  }
}

bool overlaps(const std::vector<ColumnSpan>& a, const std::vector<ColumnSpan>& b) {
  for (const auto& x : a)
    for (const auto& y : b)
      if (x.begin < y.end && y.begin < x.end) return true;
  return false;
}

double span_sum(const std::vector<double>& row, const std::vector<ColumnSpan>& spans) {
  double s = 0.0;
  for (const auto& sp : spans)
    for (std::size_t j = sp.begin; j < sp.end; ++j) s += row[j];
  return s;
}

}  // namespace

AllocationResult attention_allocation(const std::vector<AttnRow>& rows,
                                      const std::vector<ColumnSpan>& answer_span,
                                      const std::vector<ColumnSpan>& noise_span) {
  require(!rows.empty(), "attention_allocation: no attention rows given");
  require(!answer_span.empty(), "attention_allocation: empty answer span");
  const std::size_t width = rows.front().weights.size();
  for (const auto& r : rows)
    require(r.weights.size() == width, "attention_allocation: rows differ in width");
  check_spans(answer_span, width, "attention_allocation answer span");
  check_spans(noise_span, width, "attention_allocation noise span");
  require(!overlaps(answer_span, noise_span), "attention_allocation: spans overlap");

  AllocationResult res;
  std::map<int, AllocationResult::LayerBreakdown> layers;
  for (const auto& r : rows) {
    // negative net scores are clamped to zero, then the row is renormalized
    std::vector<double> w(width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += (w[j] = std::max(0.0, r.weights[j]));
    double a = 0.0, nz = 0.0;
    if (total > 0.0) {
      for (auto& v : w) v /= total;
      a = span_sum(w, answer_span);
      nz = span_sum(w, noise_span);
    }
    // an all-clamped row contributes its whole mass to "other"
    res.attn_to_answer += a;
    res.attn_noise += nz;
    res.attn_other += 1.0 - a - nz;
    res.raw_answer += span_sum(r.weights, answer_span);
    res.raw_noise += span_sum(r.weights, noise_span);
    auto& lb = layers[r.layer];
    lb.layer = r.layer;
    lb.attn_to_answer += a;
    lb.attn_noise += nz;
    lb.attn_other += 1.0 - a - nz;
    lb.rows += 1;
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  res.attn_to_answer *= inv;
  res.attn_noise *= inv;
  res.attn_other *= inv;
  res.raw_answer *= inv;
  res.raw_noise *= inv;
  res.rows = rows.size();
  for (auto& [l, lb] : layers) {
    const double li = 1.0 / static_cast<double>(lb.rows);
    lb.attn_to_answer *= li;
    lb.attn_noise *= li;
    lb.attn_other *= li;
    res.per_layer.push_back(lb);
  }
  return res;
}

OutlierStats activation_stats(std::vector<double> values, const std::vector<int>& ks) {
  require(!values.empty(), "activation_stats: empty activation stream");
  require(!ks.empty(), "activation_stats: no k values requested");
  for (auto& v : values) v = std::abs(v);
  int kmax = 0;
  for (int k : ks) {
    require(k >= 1, "activation_stats: k must be positive");
    kmax = std::max(kmax, k);
  }
  require(static_cast<std::size_t>(kmax) <= values.size(),
          "activation_stats: stream shorter than largest requested k");

  OutlierStats st;
  st.count = values.size();

  // median of magnitudes
  std::vector<double> med = values;
  const std::size_t mid = med.size() / 2;
  std::nth_element(med.begin(), med.begin() + mid, med.end());
  if (med.size() % 2 == 1) {
    st.median = med[mid];
  } else {
    const double hi = med[mid];
    std::nth_element(med.begin(), med.begin() + mid - 1, med.begin() + mid);
    st.median = 0.5 * (med[mid - 1] + hi);
  }

  std::partial_sort(values.begin(), values.begin() + kmax, values.end(),
                    std::greater<double>());
  std::vector<int> sorted_ks = ks;
  std::sort(sorted_ks.begin(), sorted_ks.end());
  for (int k : sorted_ks)
    st.top.emplace_back(k, values[static_cast<std::size_t>(k) - 1]);
  return st;
}

}  // namespace dift
