#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fnt/corpus/dataset.hpp"
#include "fnt/decoder/session_decoder.hpp"
#include "fnt/harness/metrics.hpp"
#include "fnt/predictor/model.hpp"

namespace fnt {

inline std::size_t ResolveThreads(std::size_t threads) {
  if (threads != 0) return threads;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
// written to per-index slots so the outcome does not depend on scheduling.
template <typename Fn>
void ParallelFor(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(ResolveThreads(threads), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct SessionResult {
  std::string session_id;
  std::vector<UtteranceResult> utterances;
};

struct Evaluation {
  Metrics metrics;
  std::vector<SessionResult> sessions;
};

// Summed Pred^V negative log-likelihood of each reference given the history
// transcripts the decoder actually used.
template <typename T>
void AddPerplexity(const FntModel<T>& model, const std::vector<UtteranceResult>& results,
                   HistoryMode mode, Metrics& m) {
  NoGradGuard no_grad;
  std::map<std::size_t, const UtteranceResult*> by_index;
  for (const auto& r : results) by_index[r.index] = &r;
  for (const auto& r : results) {
    if (r.reference.empty()) continue;
    std::vector<TargetSeq> history;
    for (std::size_t i : r.history) {
      const auto* h = by_index.at(i);
      history.push_back(mode == HistoryMode::kOracle ? h->reference : h->tokens);
    }
    const auto ctx = model.Prepare(model.Context(history));
    const double mean = static_cast<double>(model.LmObjective(r.reference, ctx).item());
    m.lm_nll += mean * static_cast<double>(r.reference.size());
    m.lm_tokens += r.reference.size();
  }
}

// Sequential decoding inside each session, sessions in parallel.
template <typename T>
Evaluation Evaluate(const FntModel<T>& model, const std::vector<const Session*>& sessions, const DecodeConfig& cfg,
                    const Codebook& cb, std::size_t threads = 1) {
  std::vector<SessionResult> results(sessions.size());
  std::vector<Metrics> per(sessions.size());
  ParallelFor(sessions.size(), threads, [&](std::size_t i) {
    const Session& s = *sessions[i];
    results[i].session_id = s.id;
    results[i].utterances = DecodeSession(model, s, cfg);
    for (const auto& r : results[i].utterances) {
      per[i].Add(r.reference, r.tokens, cb);
      if (model.config().streaming && cfg.streaming) per[i].end_latency.push_back(r.end_latency);
    }
    AddPerplexity(model, results[i].utterances, cfg.history_mode, per[i]);
  });
  Evaluation e;
  for (const auto& m : per) e.metrics.Merge(m);
  e.sessions = std::move(results);
  return e;
}

class LatencyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// End-latency of every utterance of every session under simulated real-time
// arrival. Sessions are decoded one at a time so timings do not contend.
template <typename T>
std::vector<double> MeasureLatency(const FntModel<T>& model, const std::vector<const Session*>& sessions,
                                   DecodeConfig cfg) {
  if (!model.config().streaming) throw LatencyError("latency: the checkpoint is not a streaming model");
  cfg.streaming = true;
  std::vector<double> out;
  for (const Session* s : sessions) {
    for (const auto& r : DecodeSession(model, *s, cfg)) out.push_back(r.end_latency);
  }
  return out;
}

struct AttentionLayer {
  std::string name;
  std::vector<std::vector<double>> weights;  // [query x context], head-averaged
};

struct AttentionDump {
  std::vector<std::string> row_labels, col_labels;
  std::vector<AttentionLayer> layers;
};

class AttentionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Pred^V attention over the history context while teacher-forcing the
// reference of one utterance. History transcripts are the references of the
// nhis preceding utterances. Row i is the query that predicts token i.
template <typename T>
AttentionDump DumpAttention(const FntModel<T>& model, const Session& s, std::size_t utterance_index, std::size_t nhis) {
  const auto& p = model.config().predictor;
  if (!p.token_level && !p.slongfnt_text) {
    throw AttentionError("dump-attn: the model has no token-level or long-content attention");
  }
  const Utterance* target = nullptr;
  std::set<std::size_t> available;
  std::map<std::size_t, const Utterance*> by_index;
  for (const auto& u : s.utterances) {
    if (u.index == utterance_index) target = &u;
    if (u.index < utterance_index) available.insert(u.index);
    by_index[u.index] = &u;
  }
  if (!target) throw AttentionError("dump-attn: session " + s.id + " has no utterance " + std::to_string(utterance_index));
  const auto window = AssembleHistory(utterance_index, nhis, available);
  if (window.empty()) throw AttentionError("dump-attn: utterance " + std::to_string(utterance_index) + " has no history");

  AttentionDump d;
  std::vector<TargetSeq> history;
  for (std::size_t i : window) {
    history.push_back(by_index.at(i)->tokens);
    d.col_labels.push_back("u" + std::to_string(i) + ":<s>");
    for (std::size_t tok : history.back()) d.col_labels.push_back("u" + std::to_string(i) + ":w" + std::to_string(tok));
  }
  for (std::size_t tok : target->tokens) d.row_labels.push_back("w" + std::to_string(tok));

  NoGradGuard no_grad;
  const auto ctx = model.Prepare(model.Context(history));
  const auto out = model.vocab_predictor().ForwardTarget(target->tokens, ctx, true);
  const std::size_t n = target->tokens.size(), lc = d.col_labels.size();
  for (std::size_t l = 0; l < out.attention.size(); ++l) {
    const auto& heads = out.attention[l];
    AttentionLayer layer;
    layer.name = p.token_level ? "layer" + std::to_string(l) : "long";
    layer.weights.assign(n, std::vector<double>(lc, 0.0));
    for (const auto& h : heads) {
      if (h.size() != (n + 1) * lc) throw std::logic_error("dump-attn: unexpected attention shape");
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < lc; ++j) layer.weights[i][j] += static_cast<double>(h[i * lc + j]);
      }
    }
    for (auto& row : layer.weights) {
      for (auto& w : row) w /= static_cast<double>(heads.size());
    }
    d.layers.push_back(std::move(layer));
  }
  return d;
}

inline std::string AttentionCsv(const AttentionDump& d, const AttentionLayer& layer) {
  std::ostringstream os;
  os << std::setprecision(9) << "query";
  for (const auto& c : d.col_labels) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < layer.weights.size(); ++i) {
    os << d.row_labels[i];
    for (double w : layer.weights[i]) os << ',' << w;
    os << '\n';
  }
  return os.str();
}

}  // namespace fnt
