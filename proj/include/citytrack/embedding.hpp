#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace citytrack {

/// Appearance embedding. Components are double in memory and float32 on disk.
using Embedding = Eigen::VectorXd;

/// Row block of an `EMB1` container.
struct EmbeddingBlock {
  std::uint32_t dim = 0;
  std::vector<Embedding> rows;
};

/// EMB1 container, little-endian:
///   bytes 0..3   magic "EMB1"
///   bytes 4..7   uint32 dimension D
///   bytes 8..15  uint64 row count N
///   then N*D float32 values, row-major.
/// Several blocks may be concatenated in one file.
void write_embedding_blocks(const std::string& path, const std::vector<EmbeddingBlock>& blocks);
std::vector<EmbeddingBlock> read_embedding_blocks(const std::string& path);

void write_embeddings(const std::string& path, std::uint32_t dim, const std::vector<Embedding>& rows);
/// Reads a single-block file. Throws ParseError on malformed input.
EmbeddingBlock read_embeddings(const std::string& path);

}  // namespace citytrack
