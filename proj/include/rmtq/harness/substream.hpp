#pragma once

#include <cstdint>
#include <initializer_list>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rmtq/error.hpp"
#include "rmtq/random.hpp"

namespace rmtq::harness {

/// One component of a substream path: a name or a counter.
using Label = std::variant<std::string_view, std::uint64_t>;

inline Label label(std::string_view s) { return s; }
inline Label label(std::uint64_t v) { return v; }

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over a tagged, length-prefixed encoding, so ("ab","c") != ("a","bc")
// and the string "1" differs from the counter 1.
inline std::uint64_t hash_path(const std::vector<Label>& path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto byte = [&](unsigned char b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  auto word = [&](std::uint64_t v) {
    for (int k = 0; k < 8; ++k) byte(static_cast<unsigned char>(v >> (8 * k)));
  };
  for (const Label& l : path) {
    if (const auto* s = std::get_if<std::string_view>(&l)) {
      byte('s');
      word(s->size());
      for (char c : *s) byte(static_cast<unsigned char>(c));
    } else {
      byte('u');
      word(std::get<std::uint64_t>(l));
    }
  }
  return h;
}

inline std::string path_key(const std::vector<Label>& path) {
  std::string key;
  for (const Label& l : path) {
    if (const auto* s = std::get_if<std::string_view>(&l)) {
      key += 's';
      key += std::to_string(s->size());
      key += ':';
      key.append(s->data(), s->size());
    } else {
      key += 'u';
      key += std::to_string(std::get<std::uint64_t>(l));
    }
    key += '/';
  }
  return key;
}

}  // namespace detail

/// Deterministic generator keyed by (master seed, label path). The path hash is
/// mixed with the seed through SplitMix64 and expanded into a seed_seq.
inline RandomSource derive_substream(std::uint64_t master, const std::vector<Label>& path) {
  std::uint64_t state = master ^ detail::hash_path(path);
  std::uint64_t mixed = detail::splitmix64(state);
  state ^= mixed;
  std::vector<std::uint32_t> words;
  for (int k = 0; k < 4; ++k) {
    const std::uint64_t v = detail::splitmix64(state);
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return RandomSource(seq);
}

inline RandomSource derive_substream(std::uint64_t master, std::initializer_list<Label> path) {
  return derive_substream(master, std::vector<Label>(path));
}

/// Hands out substreams and refuses to hand out the same path twice.
class SubstreamRegistry {
 public:
  explicit SubstreamRegistry(std::uint64_t master) : master_(master) {}

  RandomSource derive(const std::vector<Label>& path) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (!seen_.insert(detail::path_key(path)).second)
        throw InputError("derive_substream: duplicate label path " + detail::path_key(path));
    }
    return derive_substream(master_, path);
  }

  RandomSource derive(std::initializer_list<Label> path) { return derive(std::vector<Label>(path)); }

  std::uint64_t master() const { return master_; }

 private:
  std::uint64_t master_;
  std::mutex mu_;
  std::set<std::string> seen_;
};

}  // namespace rmtq::harness
