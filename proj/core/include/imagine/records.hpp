#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imagine/types.hpp"

namespace imagine {

/// id + raw float vector, the unit of exchange for embedding files.
struct EmbeddingRecord {
  std::string id;
  std::vector<float> values;
};

// Binary embedding format:
//   8-byte magic "IMGEMB01"
//   u32 dim   (little-endian)
//   u64 count (little-endian)
//   count * dim float32 values (little-endian, row-major)
// Row ids live in a sidecar file: one id per line, line i = row i.
inline constexpr char kEmbeddingMagic[8] = {'I', 'M', 'G', 'E', 'M', 'B', '0', '1'};

struct EmbeddingFile {
  uint32_t dim = 0;
  std::vector<std::string> ids;
  std::vector<float> data;  // count * dim

  size_t count() const { return ids.size(); }
  std::span<const float> row(size_t i) const { return {data.data() + i * dim, dim}; }
};

void write_embeddings(const std::filesystem::path& bin_path,
                      const std::filesystem::path& ids_path,
                      const std::vector<EmbeddingRecord>& records);

EmbeddingFile read_embeddings(const std::filesystem::path& bin_path,
                              const std::filesystem::path& ids_path);

std::vector<EmbeddingRecord> to_records(const EmbeddingFile& f);

// JSONL schemas. Field names match the domain types:
//   QAPair      {"id", "question", "candidates", "gold_index", "source_tag"}
//   VQAInstance {"qa", "image", "caption"} with image = {"id"} or null.
// Features and embeddings are never inlined; they resolve through providers.
std::string to_jsonl(const QAPair& qa);
std::string to_jsonl(const VQAInstance& inst);

QAPair qa_from_json(const std::string& line);
VQAInstance instance_from_json(const std::string& line);

void write_instances_jsonl(const std::filesystem::path& path,
                           const std::vector<VQAInstance>& instances);
std::vector<VQAInstance> read_instances_jsonl(const std::filesystem::path& path);

/// Line-delimited file helpers (UTF-8, '\n' separated).
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

}  // namespace imagine
