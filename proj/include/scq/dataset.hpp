#pragma once

// SCQD image files: "SCQD", u32 version = 1, u32 count, channels, height,
// width, then count*channels*height*width little-endian f32 pixels in [0, 1],
// image-major and channel-major within an image.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace scq::data {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 24;

struct Dataset {
  std::uint32_t count = 0;
  std::uint32_t channels = 3;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> pixels;

  std::size_t image_size() const { return std::size_t{channels} * height * width; }
  std::span<const float> image(std::size_t i) const {
    return {pixels.data() + i * image_size(), image_size()};
  }
  /// Images [first, first + n) as one contiguous span.
  std::span<const float> images(std::size_t first, std::size_t n) const {
    return {pixels.data() + first * image_size(), n * image_size()};
  }
  /// Copy of images [first, first + n).
  Dataset slice(std::size_t first, std::size_t n) const;
};

Dataset read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const Dataset& d);
std::vector<std::uint8_t> encode_dataset(const Dataset& d);

/// Uniform backgrounds with 1-3 axis-aligned rectangles and discs of random
/// color and position.
Dataset generate_synthetic(std::size_t n, std::size_t size, std::uint64_t seed);

/// Reads CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record).
Dataset read_cifar_batches(const std::vector<std::filesystem::path>& files);
/// data_batch_1..5.bin for "train", test_batch.bin for "test".
std::vector<std::filesystem::path> cifar_split_files(const std::filesystem::path& dir,
                                                     const std::string& split);

}  // namespace scq::data
