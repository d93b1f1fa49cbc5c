#ifndef ECNN_CHECKPOINT_HPP
#define ECNN_CHECKPOINT_HPP

#include <string>
#include <vector>

#include "ecnn/elastic.hpp"

namespace ecnn::ckpt {

// Single-file container: magic "ECNN1", a human-readable structured-text
// header (architecture, per-level graph structure and origin maps, prune
// records), a blob directory (name, dtype, shape, offset, length), and the
// tensor payload as little-endian IEEE-754 in directory order. Writes are
// atomic via temp-file rename; payload round-trips byte-identically.

inline constexpr char kMagic[6] = {'E', 'C', 'N', 'N', '1', '\n'};

template <typename T>
void save(const std::string& path, const elastic::LevelStack<T>& stack);

template <typename T>
elastic::LevelStack<T> load(const std::string& path);

/// Raw payload region (every tensor byte, in directory order).
std::vector<unsigned char> payload_bytes(const std::string& path);

/// Header text section, for inspection.
std::string header_text(const std::string& path);

}  // namespace ecnn::ckpt

#endif
