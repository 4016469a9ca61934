#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "subpop/repset.hpp"

namespace subpop {

// --- low-level binary helpers (explicit little-endian encoding) -------------

void write_u64_le(std::ostream& out, std::uint64_t value);
std::uint64_t read_u64_le(std::istream& in);
void write_f64le_block(std::ostream& out, const double* data, std::size_t count);
void read_f64le_block(std::istream& in, double* data, std::size_t count);

// --- atomic file output ------------------------------------------------------

// Writes through a temporary file in the same directory and renames into
// place, so readers never observe partial output.
void atomic_write_file(const std::string& path,
                       const std::function<void(std::ostream&)>& writer);
void atomic_write_text(const std::string& path, const std::string& content);

// --- hashing -----------------------------------------------------------------

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& data);
std::string sha256_file(const std::string& path);

// --- float formatting ----------------------------------------------------------

// 17 significant digits, '.' decimal separator, locale-independent;
// round-trips every finite f64.
std::string format_double(double value);

// --- RepSet files --------------------------------------------------------------

// On disk a RepSet is a manifest JSON at `path` plus two sibling files it
// names: `<path>.bin` (row-major little-endian f64 matrix) and
// `<path>.rows` (one "example_id\tposition\ttoken_id" line per row).
void write_repset(const RepSet& reps, const std::string& path);
RepSet read_repset(const std::string& path);

// --- run manifests ---------------------------------------------------------------

struct ManifestEntry {
  std::string path;    // relative to the manifest location
  std::string sha256;
};

// Record of one tool invocation. The duration field is informational and is
// the only part that varies between identical runs; reproducibility checks
// compare the input/output hash lists.
struct RunManifest {
  std::string tool_version;
  std::string command_line;
  std::vector<std::pair<std::string, std::uint64_t>> seeds;
  std::vector<ManifestEntry> inputs;
  std::vector<ManifestEntry> outputs;
  double duration_seconds = 0.0;
};

void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace subpop
