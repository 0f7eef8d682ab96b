#include "scq/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "scq/errors.hpp"
#include "scq/rng.hpp"

namespace scq::data {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
         std::uint32_t{p[3]} << 24;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return bytes;
}

}  // namespace

Dataset Dataset::slice(std::size_t first, std::size_t n) const {
  SCQ_EXPECT(first + n <= count, "Dataset::slice: range out of bounds");
  Dataset d{static_cast<std::uint32_t>(n), channels, height, width, {}};
  auto src = images(first, n);
  d.pixels.assign(src.begin(), src.end());
  return d;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
  SCQ_EXPECT(d.pixels.size() == d.count * d.image_size(), "encode_dataset: pixel count mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(kDatasetHeaderBytes + 4 * d.pixels.size());
  for (char c : {'S', 'C', 'Q', 'D'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kDatasetVersion);
  put_u32(out, d.count);
  put_u32(out, d.channels);
  put_u32(out, d.height);
  put_u32(out, d.width);
  for (float f : d.pixels) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

void write_dataset(const std::filesystem::path& path, const Dataset& d) {
  const std::vector<std::uint8_t> bytes = encode_dataset(d);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Dataset read_dataset(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  const std::string where = " in '" + path.string() + "'";
  if (bytes.size() < kDatasetHeaderBytes || std::memcmp(bytes.data(), "SCQD", 4) != 0)
    throw FormatError("missing SCQD header" + where);
  if (get_u32(bytes.data() + 4) != kDatasetVersion)
    throw FormatError("unsupported SCQD version " + std::to_string(get_u32(bytes.data() + 4)) + where);
  Dataset d;
  d.count = get_u32(bytes.data() + 8);
  d.channels = get_u32(bytes.data() + 12);
  d.height = get_u32(bytes.data() + 16);
  d.width = get_u32(bytes.data() + 20);
  const std::uint64_t expect = kDatasetHeaderBytes + std::uint64_t{4} * d.count * d.channels * d.height * d.width;
  if (bytes.size() != expect)
    throw FormatError("declared sizes need " + std::to_string(expect) + " bytes but file has " +
                      std::to_string(bytes.size()) + where);
  d.pixels.resize(d.count * d.image_size());
  for (std::size_t i = 0; i < d.pixels.size(); ++i)
    d.pixels[i] = std::bit_cast<float>(get_u32(bytes.data() + kDatasetHeaderBytes + 4 * i));
  return d;
}

Dataset generate_synthetic(std::size_t n, std::size_t size, std::uint64_t seed) {
  SCQ_EXPECT(size >= 4 && size % 4 == 0, "gen-synth: size must be a positive multiple of 4");
  Dataset d{static_cast<std::uint32_t>(n), 3, static_cast<std::uint32_t>(size),
            static_cast<std::uint32_t>(size), {}};
  d.pixels.resize(n * d.image_size());
  const Rng root(seed);
  const std::size_t plane = size * size;
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = root.substream(i);
    float* img = d.pixels.data() + i * d.image_size();
    for (std::size_t c = 0; c < 3; ++c) {
      const auto bg = static_cast<float>(r.uniform());
      std::fill(img + c * plane, img + (c + 1) * plane, bg);
    }
    const std::size_t shapes = 1 + r.below(3);
    for (std::size_t s = 0; s < shapes; ++s) {
      const bool disc = r.below(2) == 1;
      float color[3];
      for (float& c : color) c = static_cast<float>(r.uniform());
      auto paint = [&](std::size_t y, std::size_t x) {
        for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * size + x] = color[c];
      };
      if (disc) {
        const double cx = r.uniform(0.0, static_cast<double>(size));
        const double cy = r.uniform(0.0, static_cast<double>(size));
        const double rad = r.uniform(size / 8.0, size / 4.0);
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - cx;
            const double dy = static_cast<double>(y) + 0.5 - cy;
            if (dx * dx + dy * dy <= rad * rad) paint(y, x);
          }
      } else {
        const std::size_t x0 = r.below(size);
        const std::size_t y0 = r.below(size);
        const std::size_t w = size / 8 + r.below(size * 3 / 8);
        const std::size_t h = size / 8 + r.below(size * 3 / 8);
        for (std::size_t y = y0; y < std::min(size, y0 + h); ++y)
          for (std::size_t x = x0; x < std::min(size, x0 + w); ++x) paint(y, x);
      }
    }
  }
  return d;
}

std::vector<std::filesystem::path> cifar_split_files(const std::filesystem::path& dir,
                                                     const std::string& split) {
  std::vector<std::filesystem::path> files;
  if (split == "train") {
    for (int b = 1; b <= 5; ++b) files.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
  } else if (split == "test") {
    files.push_back(dir / "test_batch.bin");
  } else {
    throw ContractViolation("unknown CIFAR split '" + split + "' (expected train or test)");
  }
  for (const auto& f : files)
    if (!std::filesystem::exists(f)) throw IoError("missing CIFAR batch file '" + f.string() + "'");
  return files;
}

Dataset read_cifar_batches(const std::vector<std::filesystem::path>& files) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  Dataset d{0, 3, 32, 32, {}};
  for (const auto& f : files) {
    const std::vector<std::uint8_t> bytes = read_file(f);
    if (bytes.size() % kRecord != 0)
      throw FormatError("malformed CIFAR file '" + f.string() + "': " + std::to_string(bytes.size()) +
                        " bytes is not a multiple of the 3073-byte record");
    const std::size_t records = bytes.size() / kRecord;
    for (std::size_t r = 0; r < records; ++r) {
      const std::uint8_t* rec = bytes.data() + r * kRecord + 1;
      for (std::size_t i = 0; i < kRecord - 1; ++i) d.pixels.push_back(static_cast<float>(rec[i]) / 255.0f);
    }
    d.count += static_cast<std::uint32_t>(records);
  }
  return d;
}

}  // namespace scq::data
