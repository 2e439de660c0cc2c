#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "diffattn/grid.hpp"

namespace diffattn {

/// 8-bit RGB image, row-major interleaved.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);
/// Area interpolation when shrinking, bilinear when enlarging.
Image resize_image(const Image& img, int height, int width);

/// Single-channel map in [0, 1] stored as 16-bit grayscale.
void write_map_png16(const std::filesystem::path& path, const Grid& map);
/// Reads an 8- or 16-bit grayscale PNG into [0, 1].
Grid read_map_png(const std::filesystem::path& path);
/// JET heat map of `map` blended over `img`, at the image's resolution.
Image heat_overlay(const Image& img, const Grid& map, double alpha = 0.5);
Grid resize_grid(const Grid& g, int height, int width);

struct Sample {
  std::string id;
  Image image;
  std::vector<Point> fixations;
  double sigma = 1.0;

  FixationMap fixation_map() const;
  SaliencyMap gt(Diagnostics* diag = nullptr) const;
};

enum class Split { Train, Val, Test };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct DatasetManifest {
  std::filesystem::path root;
  Split split = Split::Train;
  /// Blur width at the resized resolution; <= 0 selects default_sigma(height).
  double sigma = 0.0;
  int height = 64;
  int width = 64;

  double effective_sigma() const;
};

/// Reads `<root>/manifest` (key = value) when present. Missing keys keep the
/// defaults of `base`.
DatasetManifest read_manifest(const std::filesystem::path& root, Split split, DatasetManifest base = {});

/// Ids listed for the split in `<root>/manifest`, or every id when no list is given.
std::vector<std::string> split_ids(const DatasetManifest& m);

/// Loads the split in lexicographic id order, resizing images to the manifest size
/// and rescaling fixations with them. Orphan files raise ErrorKind::Data listing them.
std::vector<Sample> load_dataset(const DatasetManifest& m, Diagnostics* diag = nullptr);

/// Fixation file: one "x y" pair per line.
std::vector<Point> read_fixations(const std::filesystem::path& path);
void write_fixations(const std::filesystem::path& path, const std::vector<Point>& pts);

/// Maps a pixel coordinate between resolutions using pixel centres.
Point rescale_point(Point p, int src_height, int src_width, int dst_height, int dst_width);

struct JitterConfig {
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  double flip_probability = 0.5;
};

Sample flip_sample(const Sample& s);
Image color_jitter(const Image& img, double brightness, double contrast, double saturation);

/// Random horizontal flip of image and fixations (and therefore GT) plus colour jitter on the image.
Sample augment(const Sample& s, std::mt19937_64& rng, const JitterConfig& cfg = {});

struct SynthSpec {
  int count = 8;
  int height = 64;
  int width = 64;
  std::uint64_t seed = 0;
};

/// Planted vanishing point shared by every sample of a synthetic dataset.
Point synth_vanishing_point(int height, int width);

/// Writes a procedurally generated road-scene dataset in canonical layout.
void synth_dataset(const SynthSpec& spec, const std::filesystem::path& out);

}  // namespace diffattn
