#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dehaze/generator.hpp"

namespace dehaze::cli {

enum ExitCode : int {
  kSuccess = 0,
  kRuntimeFailure = 1,
  kConfigError = 2,
  kNumericalFailure = 3,
};

/// Runs the command line (args excludes the program name). Normal output goes
/// to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// FNV-1a over the sorted relative paths and contents of every regular file
/// below dir, skipping run_manifest.json and the lock file.
std::string directory_fingerprint(const std::filesystem::path& dir);

/// Dehazes one image of any size: reflection-pads to a multiple of 4, runs the
/// generator (tile by tile when tile > 0) and crops back to the input size.
ImageTensor dehaze_any_size(const Generator<float>& net, const ImageTensor& hazy, int tile);

/// Start offsets of tiles of size `tile` with `overlap` pixels of overlap covering [0, extent).
std::vector<int> tile_origins(int extent, int tile, int overlap);

inline constexpr int kTileOverlap = 32;
inline constexpr const char* kDeviceEnv = "DEHAZE_DEVICE";

}  // namespace dehaze::cli
