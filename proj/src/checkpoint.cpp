#include "scq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "scq/errors.hpp"

namespace scq::ckpt {
namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const nlohmann::json& config,
                                            const std::vector<model::Param>& params) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    manifest.push_back({{"name", p.name},
                        {"shape", {p.value.rows(), p.value.cols()}},
                        {"offset", offset}});
    offset += 8 * p.value.size();
  }
  const std::string header = nlohmann::json{{"config", config}, {"params", manifest}}.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + header.size() + offset);
  for (char c : {'S', 'C', 'Q', 'C'}) out.push_back(static_cast<std::uint8_t>(c));
  put_le(out, kCheckpointVersion, 4);
  put_le(out, header.size(), 8);
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& p : params)
    for (double v : p.value.values()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                     const std::vector<model::Param>& params) {
  const auto bytes = encode_checkpoint(config, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  const std::string where = " in '" + path.string() + "'";
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "SCQC", 4) != 0)
    throw FormatError("missing SCQC header" + where);
  if (get_le(bytes.data() + 4, 4) != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version" + where);
  const std::uint64_t hlen = get_le(bytes.data() + 8, 8);
  if (hlen > bytes.size() - 16) throw FormatError("truncated checkpoint header" + where);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON") + where + ": " + e.what());
  }
  if (!header.contains("config") || !header.contains("params") || !header["params"].is_array())
    throw SchemaError("checkpoint header lacks config/params" + where);

  Checkpoint ck;
  ck.config = header["config"];
  const std::uint8_t* blobs = bytes.data() + 16 + hlen;
  const std::uint64_t blob_bytes = bytes.size() - 16 - hlen;
  std::uint64_t expected_offset = 0;
  for (const auto& entry : header["params"]) {
    try {
      const auto name = entry.at("name").get<std::string>();
      const auto rows = entry.at("shape").at(0).get<std::size_t>();
      const auto cols = entry.at("shape").at(1).get<std::size_t>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      if (offset != expected_offset || offset + 8 * rows * cols > blob_bytes)
        throw FormatError("parameter '" + name + "' lies outside the blob section" + where);
      Mat m(rows, cols);
      for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = std::bit_cast<double>(get_le(blobs + offset + 8 * i, 8));
      expected_offset = offset + 8 * m.size();
      ck.params.push_back({name, std::move(m)});
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("malformed parameter manifest") + where + ": " + e.what());
    }
  }
  if (expected_offset != blob_bytes) throw FormatError("trailing bytes after parameters" + where);
  return ck;
}

}  // namespace scq::ckpt
