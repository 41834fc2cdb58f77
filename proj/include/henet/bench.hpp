// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "henet/params.hpp"

namespace henet {

// ---------------------------------------------------------------------------
// Micro-benchmark report: one row per operation, emitted as a text table or
// CSV. Timing convention: 10 warmup iterations, then mean and std over the
// requested trial count (at least 100).
// ---------------------------------------------------------------------------

struct BenchRow {
  std::string op;
  std::string preset;
  double mean_ns = 0.0;
  double std_ns = 0.0;
  std::size_t trials = 0;
  std::size_t memory_words = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;

  const BenchRow& row(const std::string& op) const {
    for (const auto& r : rows) {
      if (r.op == op) return r;
    }
    throw ValidationError("no bench row named " + op);
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << "op,preset,mean_ns,std_ns,trials,memory_words\n";
    for (const auto& r : rows) {
      out << r.op << ',' << r.preset << ',' << r.mean_ns << ',' << r.std_ns << ',' << r.trials
          << ',' << r.memory_words << '\n';
    }
    return out.str();
  }

  std::string to_table() const {
    std::ostringstream out;
    out << "  " << pad("op", 24) << pad("preset", 8) << pad("mean(ns)", 14) << pad("std(ns)", 12)
        << pad("trials", 8) << pad("mem(words)", 12) << '\n';
    for (const auto& r : rows) {
      out << "  " << pad(r.op, 24) << pad(r.preset, 8) << pad(format(r.mean_ns), 14)
          << pad(format(r.std_ns), 12) << pad(std::to_string(r.trials), 8)
          << pad(std::to_string(r.memory_words), 12) << '\n';
    }
    return out.str();
  }

 private:
  static std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
  }
  static std::string format(double v) {
    std::ostringstream o;
    o.precision(1);
    o << std::fixed << v;
    return o.str();
  }
};

constexpr std::size_t kBenchMinTrials = 100;
constexpr std::size_t kBenchWarmup = 10;

/// Times `fn` over `trials` runs after warmup. The callable must keep its
/// result observable (return or store it) so the work is not elided.
template <typename Fn>
BenchRow bench_op(const std::string& op, const std::string& preset, std::size_t trials,
                  std::size_t memory_words, Fn&& fn) {
  trials = std::max(trials, kBenchMinTrials);
  for (std::size_t i = 0; i < kBenchWarmup; ++i) fn();
  std::vector<double> ns(trials);
  for (std::size_t i = 0; i < trials; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    ns[i] = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0)
                .count();
  }
  double mean = 0;
  for (double v : ns) mean += v;
  mean /= static_cast<double>(trials);
  double var = 0;
  for (double v : ns) var += (v - mean) * (v - mean);
  var /= static_cast<double>(trials);
  return BenchRow{op, preset, mean, std::sqrt(var), trials, memory_words};
}

}  // namespace henet
