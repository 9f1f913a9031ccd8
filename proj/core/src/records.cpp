#include "imagine/records.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace imagine {

namespace {

static_assert(std::endian::native == std::endian::little,
              "embedding file IO assumes a little-endian host");

void write_exact(std::ofstream& out, const void* p, size_t n, const std::filesystem::path& path) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out) throw DataError("write failed: " + path.string());
}

void read_exact(std::ifstream& in, void* p, size_t n, const std::filesystem::path& path) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw DataError("truncated embedding file: " + path.string());
  }
}

}  // namespace

void write_embeddings(const std::filesystem::path& bin_path,
                      const std::filesystem::path& ids_path,
                      const std::vector<EmbeddingRecord>& records) {
  const uint32_t dim = records.empty() ? 0 : static_cast<uint32_t>(records[0].values.size());
  for (const auto& r : records) {
    if (r.values.size() != dim) {
      throw DataError("write_embeddings: inconsistent dimension for id " + r.id);
    }
  }
  std::ofstream out(bin_path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + bin_path.string());
  write_exact(out, kEmbeddingMagic, sizeof(kEmbeddingMagic), bin_path);
  const uint64_t count = records.size();
  write_exact(out, &dim, sizeof(dim), bin_path);
  write_exact(out, &count, sizeof(count), bin_path);
  for (const auto& r : records) {
    write_exact(out, r.values.data(), r.values.size() * sizeof(float), bin_path);
  }

  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.id);
  write_lines(ids_path, ids);
}

EmbeddingFile read_embeddings(const std::filesystem::path& bin_path,
                              const std::filesystem::path& ids_path) {
  std::ifstream in(bin_path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file: " + bin_path.string());
  char magic[8];
  read_exact(in, magic, sizeof(magic), bin_path);
  if (std::memcmp(magic, kEmbeddingMagic, sizeof(magic)) != 0) {
    throw DataError("bad magic in embedding file: " + bin_path.string());
  }
  EmbeddingFile f;
  uint64_t count = 0;
  read_exact(in, &f.dim, sizeof(f.dim), bin_path);
  read_exact(in, &count, sizeof(count), bin_path);
  f.data.resize(count * f.dim);
  if (!f.data.empty()) {
    read_exact(in, f.data.data(), f.data.size() * sizeof(float), bin_path);
  }
  f.ids = read_lines(ids_path);
  if (f.ids.size() != count) {
    throw DataError("embedding sidecar " + ids_path.string() + " has " +
                    std::to_string(f.ids.size()) + " ids, file has " + std::to_string(count) +
                    " rows");
  }
  return f;
}

std::vector<EmbeddingRecord> to_records(const EmbeddingFile& f) {
  std::vector<EmbeddingRecord> out;
  out.reserve(f.count());
  for (size_t i = 0; i < f.count(); ++i) {
    auto row = f.row(i);
    out.push_back({f.ids[i], std::vector<float>(row.begin(), row.end())});
  }
  return out;
}

std::string to_jsonl(const QAPair& qa) {
  nlohmann::json j;
  j["id"] = qa.id;
  j["question"] = qa.question;
  j["candidates"] = qa.candidates;
  j["gold_index"] = qa.gold_index;
  j["source_tag"] = to_string(qa.source_tag);
  return j.dump();
}

std::string to_jsonl(const VQAInstance& inst) {
  nlohmann::json j;
  j["qa"] = nlohmann::json::parse(to_jsonl(inst.qa));
  if (inst.image) {
    j["image"] = {{"id", inst.image->id}};
  } else {
    j["image"] = nullptr;
  }
  if (inst.caption) {
    j["caption"] = *inst.caption;
  } else {
    j["caption"] = nullptr;
  }
  return j.dump();
}

namespace {

QAPair qa_from_json_obj(const nlohmann::json& j) {
  QAPair qa;
  qa.id = j.at("id").get<std::string>();
  qa.question = j.at("question").get<std::string>();
  qa.candidates = j.at("candidates").get<std::vector<std::string>>();
  qa.gold_index = j.at("gold_index").get<int>();
  qa.source_tag = source_tag_from_string(j.at("source_tag").get<std::string>());
  qa.validate();
  return qa;
}

}  // namespace

QAPair qa_from_json(const std::string& line) {
  try {
    return qa_from_json_obj(nlohmann::json::parse(line));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad QAPair record: ") + e.what());
  }
}

VQAInstance instance_from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    VQAInstance inst;
    inst.qa = qa_from_json_obj(j.at("qa"));
    if (j.contains("image") && !j.at("image").is_null()) {
      ImageRef ref;
      ref.id = j.at("image").at("id").get<std::string>();
      inst.image = std::move(ref);
    }
    if (j.contains("caption") && !j.at("caption").is_null()) {
      inst.caption = j.at("caption").get<std::string>();
    }
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad VQAInstance record: ") + e.what());
  }
}

void write_instances_jsonl(const std::filesystem::path& path,
                           const std::vector<VQAInstance>& instances) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for write: " + path.string());
  for (const auto& inst : instances) out << to_jsonl(inst) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<VQAInstance> read_instances_jsonl(const std::filesystem::path& path) {
  std::vector<VQAInstance> out;
  size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(instance_from_json(line));
    } catch (const Error& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for write: " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace imagine
