#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace batchsel {

// Fixed-capacity ring buffer of the most recent predicted labels for one
// training sample. Appending at capacity evicts the oldest entry.
class LabelHistory {
 public:
  explicit LabelHistory(std::size_t capacity) : ring_(capacity) {
    if (capacity == 0) {
      throw std::invalid_argument("LabelHistory: capacity must be positive");
    }
  }

  std::size_t capacity() const { return ring_.size(); }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::uint64_t recorded_count() const { return recorded_; }

  void push(std::int32_t label) {
    const std::size_t cap = ring_.size();
    if (size_ < cap) {
      ring_[(head_ + size_) % cap] = label;
      ++size_;
    } else {
      ring_[head_] = label;
      head_ = (head_ + 1) % cap;
    }
    ++recorded_;
  }

  // i-th entry, oldest first.
  std::int32_t at(std::size_t i) const {
    if (i >= size_) {
      throw std::out_of_range("LabelHistory: index past end");
    }
    return ring_[(head_ + i) % ring_.size()];
  }

  std::vector<std::int32_t> entries() const {
    std::vector<std::int32_t> out(size_);
    for (std::size_t i = 0; i < size_; ++i) out[i] = at(i);
    return out;
  }

 private:
  std::vector<std::int32_t> ring_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  std::uint64_t recorded_ = 0;
};

inline std::vector<std::int64_t> label_counts(const LabelHistory& h,
                                              std::size_t num_classes) {
  std::vector<std::int64_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const std::int32_t label = h.at(i);
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw std::invalid_argument("label_counts: stored label out of range");
    }
    ++counts[static_cast<std::size_t>(label)];
  }
  return counts;
}

// Empirical distribution of labels in the window: component j is
// count(j) / window length.
inline std::vector<double> label_probability(const LabelHistory& h,
                                             std::size_t num_classes) {
  if (h.empty()) {
    throw std::runtime_error("label_probability: no observations in history");
  }
  const auto counts = label_counts(h, num_classes);
  std::vector<double> probs(num_classes);
  const double n = static_cast<double>(h.size());
  for (std::size_t j = 0; j < num_classes; ++j) {
    probs[j] = static_cast<double>(counts[j]) / n;
  }
  return probs;
}

// Normalized entropy of the window's label distribution, in [0, 1].
// Zero-count classes contribute nothing (0 log 0 := 0); the log base
// cancels in the ratio.
inline double predictive_uncertainty(const LabelHistory& h,
                                     std::size_t num_classes) {
  if (num_classes < 2) {
    throw std::invalid_argument("predictive_uncertainty: need k >= 2");
  }
  if (h.empty()) {
    throw std::runtime_error(
        "predictive_uncertainty: no observations in history");
  }
  const auto counts = label_counts(h, num_classes);
  const double n = static_cast<double>(h.size());
  double entropy = 0.0;
  for (const std::int64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    entropy -= p * std::log(p);
  }
  const double u = entropy / std::log(static_cast<double>(num_classes));
  return u < 0.0 ? 0.0 : (u > 1.0 ? 1.0 : u);
}

// One LabelHistory per training sample; index i is permanently bound to
// sample x_i.
class HistoryBank {
 public:
  HistoryBank(std::size_t num_samples, std::size_t num_classes,
              std::size_t window)
      : num_classes_(num_classes), window_(window) {
    if (num_samples == 0) {
      throw std::invalid_argument("HistoryBank: need at least one sample");
    }
    if (num_classes < 2) {
      throw std::invalid_argument("HistoryBank: need k >= 2");
    }
    if (window == 0) {
      throw std::invalid_argument("HistoryBank: window must be positive");
    }
    histories_.assign(num_samples, LabelHistory(window));
  }

  std::size_t size() const { return histories_.size(); }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t window() const { return window_; }

  const LabelHistory& history(std::size_t i) const {
    if (i >= histories_.size()) {
      throw std::out_of_range("HistoryBank: sample index out of range");
    }
    return histories_[i];
  }

  void record(std::size_t sample_index, std::int32_t predicted_label) {
    if (sample_index >= histories_.size()) {
      throw std::out_of_range("HistoryBank::record: sample index " +
                              std::to_string(sample_index) + " >= " +
                              std::to_string(histories_.size()));
    }
    if (predicted_label < 0 ||
        static_cast<std::size_t>(predicted_label) >= num_classes_) {
      throw std::invalid_argument("HistoryBank::record: label " +
                                  std::to_string(predicted_label) +
                                  " outside [0, k)");
    }
    histories_[sample_index].push(predicted_label);
  }

  bool all_nonempty() const {
    for (const auto& h : histories_) {
      if (h.empty()) return false;
    }
    return true;
  }

  // Debug dump: sample_index,window_len,u_value
  void dump_uncertainty_csv(std::ostream& os) const {
    os << "sample_index,window_len,u_value\n";
    char line[96];
    for (std::size_t i = 0; i < histories_.size(); ++i) {
      const double u = histories_[i].empty()
                           ? 0.0
                           : predictive_uncertainty(histories_[i], num_classes_);
      std::snprintf(line, sizeof(line), "%zu,%zu,%.10g\n", i,
                    histories_[i].size(), u);
      os << line;
    }
  }

 private:
  std::vector<LabelHistory> histories_;
  std::size_t num_classes_;
  std::size_t window_;
};

}  // namespace batchsel
