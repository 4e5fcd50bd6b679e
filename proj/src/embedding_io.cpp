#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "citytrack/embedding.hpp"
#include "citytrack/errors.hpp"

namespace citytrack {

namespace {

constexpr std::array<char, 4> kMagic{'E', 'M', 'B', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
bool get_le(std::istream& in, T& value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) return false;
  value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return true;
}

}  // namespace

void write_embedding_blocks(const std::string& path, const std::vector<EmbeddingBlock>& blocks) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  for (const auto& block : blocks) {
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, block.dim);
    put_le<std::uint64_t>(out, block.rows.size());
    for (const auto& row : block.rows) {
      if (row.size() != static_cast<Eigen::Index>(block.dim)) {
        throw DimensionMismatch("row length does not match block dimension");
      }
      for (Eigen::Index i = 0; i < row.size(); ++i) {
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(row(i))));
      }
    }
  }
  if (!out) throw ParseError("write failed: " + path);
}

std::vector<EmbeddingBlock> read_embedding_blocks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<EmbeddingBlock> blocks;
  while (true) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size())) {
      if (in.gcount() == 0) break;
      throw ParseError(path + ": truncated header");
    }
    if (magic != kMagic) throw ParseError(path + ": bad magic");
    EmbeddingBlock block;
    std::uint64_t n = 0;
    if (!get_le(in, block.dim) || !get_le(in, n)) throw ParseError(path + ": truncated header");
    block.rows.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t r = 0; r < n; ++r) {
      Embedding row(block.dim);
      for (std::uint32_t i = 0; i < block.dim; ++i) {
        std::uint32_t bits = 0;
        if (!get_le(in, bits)) throw ParseError(path + ": truncated payload");
        row(i) = static_cast<double>(std::bit_cast<float>(bits));
      }
      block.rows.push_back(std::move(row));
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

void write_embeddings(const std::string& path, std::uint32_t dim, const std::vector<Embedding>& rows) {
  write_embedding_blocks(path, {EmbeddingBlock{dim, rows}});
}

EmbeddingBlock read_embeddings(const std::string& path) {
  auto blocks = read_embedding_blocks(path);
  if (blocks.size() != 1) throw ParseError(path + ": expected exactly one block");
  return std::move(blocks.front());
}

}  // namespace citytrack
