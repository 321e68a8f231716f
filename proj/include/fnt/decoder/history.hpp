#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnt/encoder/encoder.hpp"

namespace fnt {

class HistoryError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class HistoryMode { kOracle, kHypothesis, kNone };

inline std::string ToString(HistoryMode m) {
  switch (m) {
    case HistoryMode::kOracle: return "oracle";
    case HistoryMode::kHypothesis: return "hypothesis";
    case HistoryMode::kNone: return "none";
  }
  return "?";
}

inline HistoryMode ParseHistoryMode(const std::string& s) {
  if (s == "oracle") return HistoryMode::kOracle;
  if (s == "hypothesis" || s == "hyp") return HistoryMode::kHypothesis;
  if (s == "none") return HistoryMode::kNone;
  throw std::invalid_argument("unknown history mode: " + s);
}

// The nhis largest available indices below p, ascending.
inline std::vector<std::size_t> AssembleHistory(std::size_t p, std::size_t nhis, const std::set<std::size_t>& available) {
  std::vector<std::size_t> out;
  for (auto it = available.lower_bound(p); it != available.begin() && out.size() < nhis;) {
    --it;
    out.insert(out.begin(), *it);
  }
  return out;
}

template <typename T>
struct HistoryEntry {
  std::vector<std::size_t> transcript;
  std::optional<EncodedSeq<T>> speech;  // encoder states recorded while decoding
  std::optional<Tensor<T>> predv_hidden;  // cached no-context Pred^V rows
};

// Per-session record of decoded utterances. Decoding must proceed in
// increasing index order.
template <typename T>
class HistoryBuffer {
 public:
  explicit HistoryBuffer(HistoryMode mode = HistoryMode::kHypothesis) : mode_(mode) {}

  HistoryMode mode() const { return mode_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(std::size_t index) const { return entries_.count(index) > 0; }
  const HistoryEntry<T>& at(std::size_t index) const { return entries_.at(index); }
  HistoryEntry<T>& at(std::size_t index) { return entries_.at(index); }

  std::set<std::size_t> indices() const {
    std::set<std::size_t> s;
    for (const auto& [k, v] : entries_) s.insert(k);
    return s;
  }

  void CheckOrder(std::size_t index) const {
    if (!entries_.empty() && index <= entries_.rbegin()->first) {
      throw HistoryError("history: utterance " + std::to_string(index) + " decoded after utterance " +
                         std::to_string(entries_.rbegin()->first));
    }
  }

  void Update(std::size_t index, std::vector<std::size_t> transcript, std::optional<EncodedSeq<T>> speech = {}) {
    if (contains(index)) throw HistoryError("history: utterance " + std::to_string(index) + " already recorded");
    CheckOrder(index);
    entries_[index] = HistoryEntry<T>{std::move(transcript), std::move(speech), std::nullopt};
  }

  // Stores the reference in oracle mode and the 1-best otherwise.
  void Record(std::size_t index, const std::vector<std::size_t>& reference, const std::vector<std::size_t>& hypothesis,
              std::optional<EncodedSeq<T>> speech = {}) {
    Update(index, mode_ == HistoryMode::kOracle ? reference : hypothesis, std::move(speech));
  }

  std::vector<std::size_t> Window(std::size_t p, std::size_t nhis) const {
    if (mode_ == HistoryMode::kNone) return {};
    return AssembleHistory(p, nhis, indices());
  }

 private:
  HistoryMode mode_;
  std::map<std::size_t, HistoryEntry<T>> entries_;
};

}  // namespace fnt
