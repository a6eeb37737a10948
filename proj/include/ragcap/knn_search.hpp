#pragma once

// Exact top-K retrieval by inner product over a frozen EmbeddingStore.
//
// Every row is scored with the same fixed summation order (eight double
// lanes, combined pairwise, then the tail), so a row's score does not depend
// on its position in the store or on how rows are split across threads.
// Ordering is by score descending, then entry id ascending.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ragcap/embedding_store.hpp"
#include "ragcap/error.hpp"

namespace ragcap {

struct RetrievalHit {
  std::size_t entry_id = 0;
  double score = 0.0;
  std::size_t rank = 0;

  bool operator==(const RetrievalHit&) const = default;
};

struct SearchOptions {
  // 0 means std::thread::hardware_concurrency().
  unsigned threads = 0;
  // Rows per work unit. Block boundaries are fixed, independent of thread count.
  std::size_t block_rows = 8192;
  // Tolerance on the query's unit-norm precondition.
  double norm_tolerance = 1e-4;
};

namespace detail {

inline double dot_f32_f64(const float* row, const double* query, std::size_t d) noexcept {
  std::array<double, 8> acc{};
  std::size_t j = 0;
  for (; j + 8 <= d; j += 8) {
    for (std::size_t t = 0; t < 8; ++t) acc[t] += static_cast<double>(row[j + t]) * query[j + t];
  }
  double sum = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; j < d; ++j) sum += static_cast<double>(row[j]) * query[j];
  return sum;
}

inline unsigned resolve_threads(unsigned requested, std::size_t blocks) {
  unsigned t = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(t, std::max<std::size_t>(blocks, 1)));
}

// Runs fn(i) for i in [0, count) on up to `threads` workers with a static
// round-robin assignment.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  for (unsigned w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += threads) fn(i);
    });
  }
}

inline void check_query(const EmbeddingStore& store, std::span<const float> query, double tol) {
  if (store.empty()) throw InputError("search over an empty store");
  if (query.size() != store.dimension()) throw DimensionError(store.dimension(), query.size());
  double sq = 0.0;
  for (float x : query) sq += static_cast<double>(x) * x;
  if (std::abs(std::sqrt(sq) - 1.0) > tol) throw InputError("query embedding is not unit-normalized");
}

inline std::vector<RetrievalHit> select_top(const std::vector<double>& scores, std::size_t k) {
  const std::size_t n = scores.size();
  k = std::min(k, n);
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), better);
  std::vector<RetrievalHit> hits(k);
  for (std::size_t r = 0; r < k; ++r) hits[r] = {ids[r], scores[ids[r]], r};
  return hits;
}

inline std::vector<double> score_all(const EmbeddingStore& store, std::span<const float> query,
                                     unsigned threads, std::size_t block_rows) {
  const std::size_t n = store.size();
  const std::size_t d = store.dimension();
  std::vector<double> q(query.begin(), query.end());
  std::vector<double> scores(n);
  const float* base = store.vectors().data();
  block_rows = std::max<std::size_t>(block_rows, 1);
  const std::size_t blocks = (n + block_rows - 1) / block_rows;
  parallel_for(blocks, threads, [&](std::size_t b) {
    const std::size_t end = std::min(n, (b + 1) * block_rows);
    for (std::size_t i = b * block_rows; i < end; ++i) scores[i] = dot_f32_f64(base + i * d, q.data(), d);
  });
  return scores;
}

}  // namespace detail

// The k entries with the highest inner product against `query`
// (min(k, store.size()) hits).
inline std::vector<RetrievalHit> top_k(const EmbeddingStore& store, std::span<const float> query, std::size_t k,
                                       const SearchOptions& opts = {}) {
  if (k == 0) throw InputError("k must be at least 1");
  detail::check_query(store, query, opts.norm_tolerance);
  // Small stores are not worth the thread start-up.
  const std::size_t work = store.size() * store.dimension();
  const std::size_t blocks = (store.size() + opts.block_rows - 1) / std::max<std::size_t>(opts.block_rows, 1);
  const unsigned threads = work < (1u << 20) ? 1u : detail::resolve_threads(opts.threads, blocks);
  return detail::select_top(detail::score_all(store, query, threads, opts.block_rows), k);
}

inline std::vector<RetrievalHit> top_k(const EmbeddingStore& store, const Embedding& query, std::size_t k,
                                       const SearchOptions& opts = {}) {
  return top_k(store, std::span<const float>(query.values), k, opts);
}

// Elementwise top_k; output order matches input order. Each query runs
// single-threaded; queries fan out across workers.
inline std::vector<std::vector<RetrievalHit>> top_k_batch(const EmbeddingStore& store,
                                                          std::span<const Embedding> queries, std::size_t k,
                                                          const SearchOptions& opts = {}) {
  if (queries.empty()) return {};
  if (k == 0) throw InputError("k must be at least 1");
  for (std::size_t i = 0; i < queries.size(); ++i) {
    try {
      detail::check_query(store, queries[i].values, opts.norm_tolerance);
    } catch (const InputError& e) {
      throw InputError("query " + std::to_string(i) + ": " + e.what());
    }
  }
  std::vector<std::vector<RetrievalHit>> out(queries.size());
  SearchOptions inner = opts;
  inner.threads = 1;
  const unsigned threads = detail::resolve_threads(opts.threads, queries.size());
  detail::parallel_for(queries.size(), threads, [&](std::size_t i) {
    out[i] = detail::select_top(detail::score_all(store, queries[i].values, 1, inner.block_rows), k);
  });
  return out;
}

}  // namespace ragcap
