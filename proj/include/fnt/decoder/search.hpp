#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

namespace fnt {

// A scorer supplies, for one utterance, log P([blank; vocab]) at frame t
// given a predictor state, plus predictor state transitions:
//   using State = ...;
//   std::size_t frames() const;
//   State Start() const;
//   State Advance(const State&, std::size_t token) const;
//   std::vector<double> LogProbs(std::size_t t, const State&) const;   // size 1 + U, blank first

struct SearchConfig {
  std::size_t beam_width = 8;
  std::size_t max_symbols_per_frame = 5;

  void Validate() const {
    if (beam_width == 0) throw std::invalid_argument("search: beam_width must be >= 1");
    if (max_symbols_per_frame == 0) throw std::invalid_argument("search: max_symbols_per_frame must be >= 1");
  }
};

template <typename State>
struct Hypothesis {
  std::vector<std::size_t> tokens;
  double score = 0;
  std::shared_ptr<const State> state;
};

inline double LogAddExp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Higher score first, then the lexicographically smaller token sequence.
inline bool Outranks(double sa, const std::vector<std::size_t>& ta, double sb, const std::vector<std::size_t>& tb) {
  if (sa != sb) return sa > sb;
  return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(), tb.end());
}

// Frame-synchronous greedy search, resumable as frames arrive.
template <typename Scorer>
class GreedySearch {
 public:
  using State = typename Scorer::State;

  GreedySearch(const Scorer& scorer, SearchConfig cfg = {}) : cfg_(cfg) {
    cfg_.Validate();
    hyp_.state = std::make_shared<const State>(scorer.Start());
  }

  // At each step the candidate with the highest path score wins; equal scores
  // go to the lowest index, so blank wins ties.
  void Run(const Scorer& scorer, std::size_t end_frame) {
    for (; t_ < end_frame; ++t_) {
      for (std::size_t emitted = 0;; ++emitted) {
        const auto lp = scorer.LogProbs(t_, *hyp_.state);
        std::size_t best = 0;
        double best_score = hyp_.score + lp[0];
        if (emitted < cfg_.max_symbols_per_frame) {
          for (std::size_t k = 1; k < lp.size(); ++k) {
            const double s = hyp_.score + lp[k];
            if (s > best_score) {
              best = k;
              best_score = s;
            }
          }
        }
        hyp_.score = best_score;
        if (best == 0) break;
        hyp_.tokens.push_back(best - 1);
        hyp_.state = std::make_shared<const State>(scorer.Advance(*hyp_.state, best - 1));
      }
    }
  }

  std::size_t frames_done() const { return t_; }
  const Hypothesis<State>& best() const { return hyp_; }

 private:
  SearchConfig cfg_;
  Hypothesis<State> hyp_;
  std::size_t t_ = 0;
};

// Frame-synchronous beam search. Within a frame, hypotheses are expanded in
// order of token count so that every path reaching a prefix is merged
// (log-sum-exp) before that prefix is expanded. After each expansion level the
// union of finished (blank-taken) and still-active hypotheses is pruned to the
// beam width.
//
// A width-W search also carries nested lanes of width W/2, W/4, ..., 1 that
// share predictor states and log-probabilities, and returns the best final
// hypothesis over all lanes, so its result never scores below that of a
// narrower search (or of greedy search, the width-1 lane).
template <typename Scorer>
class BeamSearch {
 public:
  using State = typename Scorer::State;
  using Hyp = Hypothesis<State>;

  BeamSearch(const Scorer& scorer, SearchConfig cfg = {}) : cfg_(cfg) {
    cfg_.Validate();
    Hyp h;
    h.state = std::make_shared<const State>(scorer.Start());
    for (std::size_t w = cfg_.beam_width;; w /= 2) {
      lanes_.push_back(Lane{w, {h}});
      if (w == 1) break;
    }
  }

  void Run(const Scorer& scorer, std::size_t end_frame) {
    for (; t_ < end_frame; ++t_) {
      FrameCache cache;
      for (auto& lane : lanes_) Frame(scorer, lane, cache);
    }
  }

  std::size_t frames_done() const { return t_; }
  // Final beam of the full-width lane, best first.
  const std::vector<Hyp>& beam() const { return lanes_.front().beam; }
  const Hyp& best() const {
    const Hyp* b = &lanes_.front().beam.front();
    for (const auto& lane : lanes_) {
      const Hyp& h = lane.beam.front();
      if (Outranks(h.score, h.tokens, b->score, b->tokens)) b = &h;
    }
    return *b;
  }

 private:
  using Key = std::vector<std::size_t>;
  struct Lane {
    std::size_t width;
    std::vector<Hyp> beam;
  };
  using ActiveKey = std::pair<Key, std::size_t>;
  struct Node {
    double score;
    std::shared_ptr<const State> state;         // null until materialized
    std::shared_ptr<const State> parent_state;  // state before the last token
  };
  struct FrameCache {
    std::map<Key, std::shared_ptr<const State>> states;
    std::map<Key, std::vector<double>> logprobs;
  };

  // Active nodes are keyed by (prefix, emissions in this frame) so that the
  // per-frame emission cap holds on every merged path; finished nodes merge
  // on the prefix alone.
  void Frame(const Scorer& scorer, Lane& lane, FrameCache& cache) const {
    std::map<ActiveKey, Node> active;
    std::map<Key, Node> finished;
    for (auto& h : lane.beam) active.emplace(ActiveKey{h.tokens, 0}, Node{h.score, h.state, nullptr});
    while (!active.empty()) {
      std::size_t level = std::numeric_limits<std::size_t>::max();
      for (const auto& [k, n] : active) level = std::min(level, k.first.size());
      std::vector<std::pair<ActiveKey, Node>> expand;
      for (auto it = active.begin(); it != active.end();) {
        if (it->first.first.size() == level) {
          expand.emplace_back(it->first, std::move(it->second));
          it = active.erase(it);
        } else {
          ++it;
        }
      }
      for (auto& [akey, node] : expand) {
        const auto& [key, emitted] = akey;
        if (!node.state) {
          auto& slot = cache.states[key];
          if (!slot) slot = std::make_shared<const State>(scorer.Advance(*node.parent_state, key.back()));
          node.state = slot;
        }
        auto lp_it = cache.logprobs.find(key);
        if (lp_it == cache.logprobs.end()) lp_it = cache.logprobs.emplace(key, scorer.LogProbs(t_, *node.state)).first;
        const auto& lp = lp_it->second;
        Merge(finished, key, Node{node.score + lp[0], node.state, nullptr});
        if (emitted >= cfg_.max_symbols_per_frame) continue;
        for (std::size_t k = 1; k < lp.size(); ++k) {
          Key next = key;
          next.push_back(k - 1);
          Merge(active, ActiveKey{std::move(next), emitted + 1}, Node{node.score + lp[k], nullptr, node.state});
        }
      }
      Prune(active, finished, lane.width);
    }
    lane.beam.clear();
    for (auto& [key, node] : finished) lane.beam.push_back(Hyp{key, node.score, node.state});
    std::sort(lane.beam.begin(), lane.beam.end(),
              [](const Hyp& a, const Hyp& b) { return Outranks(a.score, a.tokens, b.score, b.tokens); });
  }

  template <typename K>
  static void Merge(std::map<K, Node>& into, K key, Node node) {
    auto it = into.find(key);
    if (it == into.end()) {
      into.emplace(std::move(key), std::move(node));
      return;
    }
    it->second.score = LogAddExp(it->second.score, node.score);
    if (!it->second.state && node.state) it->second.state = node.state;
  }

  // Keep the best `width` entries across both sets. Ties on score and tokens
  // go to finished entries, then to fewer emissions.
  static void Prune(std::map<ActiveKey, Node>& active, std::map<Key, Node>& finished, std::size_t width) {
    struct Ref {
      const Key* key;
      double score;
      std::size_t order;  // 0 finished, 1 + emitted for active
    };
    std::vector<Ref> all;
    for (const auto& [k, n] : finished) all.push_back({&k, n.score, 0});
    for (const auto& [k, n] : active) all.push_back({&k.first, n.score, 1 + k.second});
    if (all.size() <= width) return;
    auto better = [](const Ref& a, const Ref& b) {
      if (a.score != b.score || *a.key != *b.key) return Outranks(a.score, *a.key, b.score, *b.key);
      return a.order < b.order;
    };
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(width) - 1, all.end(), better);
    const Key cut_key = *all[width - 1].key;
    const Ref cut{&cut_key, all[width - 1].score, all[width - 1].order};
    std::erase_if(finished, [&](const auto& kv) { return better(cut, Ref{&kv.first, kv.second.score, 0}); });
    std::erase_if(active,
                  [&](const auto& kv) { return better(cut, Ref{&kv.first.first, kv.second.score, 1 + kv.first.second}); });
  }

  SearchConfig cfg_;
  std::vector<Lane> lanes_;
  std::size_t t_ = 0;
};

template <typename Scorer>
Hypothesis<typename Scorer::State> GreedyDecode(const Scorer& scorer, SearchConfig cfg = {}) {
  GreedySearch<Scorer> g(scorer, cfg);
  g.Run(scorer, scorer.frames());
  return g.best();
}

template <typename Scorer>
Hypothesis<typename Scorer::State> BeamDecode(const Scorer& scorer, SearchConfig cfg = {}) {
  BeamSearch<Scorer> b(scorer, cfg);
  b.Run(scorer, scorer.frames());
  return b.best();
}

}  // namespace fnt
