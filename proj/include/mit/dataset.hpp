#pragma once

#include <filesystem>

#include "mit/scene.hpp"

namespace mit {

// On-disk layout:
//   <root>/manifest.txt                 class table and scene directory list
//   <root>/<scene>/points.tsv           x y z r g b label   (label −1 when absent)
//   <root>/<scene>/tags.txt             C space-separated 0/1
//   <root>/<scene>/views/NNN.ppm        binary PPM (P6), 8-bit
//   <root>/<scene>/views/NNN.depth      little-endian float32, H·W, optional
//   <root>/<scene>/views/NNN.cam        3×3 intrinsics rows, then 3×4 [R|t] camera-to-world, optional

void write_dataset(const Dataset& dataset, const std::filesystem::path& root);

/// Parses a dataset directory. Malformed files raise ParseError naming the
/// file and the line (text files) or byte offset (binary files).
Dataset read_dataset(const std::filesystem::path& root);

/// read_dataset, additionally rejecting a dataset without scenes.
Dataset read_training_dataset(const std::filesystem::path& root);

}  // namespace mit
