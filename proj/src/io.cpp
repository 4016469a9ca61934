#include "subpop/io.hpp"

#include <atomic>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "subpop/errors.hpp"

namespace subpop {

using nlohmann::json;

void write_u64_le(std::ostream& out, std::uint64_t value) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw DataError("unexpected end of file while reading u64");
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i) value |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return value;
}

void write_f64le_block(std::ostream& out, const double* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      write_u64_le(out, std::bit_cast<std::uint64_t>(data[i]));
    }
  }
}

void read_f64le_block(std::istream& in, double* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw DataError("unexpected end of file while reading f64 block");
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      data[i] = std::bit_cast<double>(read_u64_le(in));
    }
  }
}

void atomic_write_file(const std::string& path,
                       const std::function<void(std::ostream&)>& writer) {
  static std::atomic<std::uint64_t> counter{0};
  std::string tmp = path + ".tmp" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp + "' for writing");
    writer(out);
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw DataError("write failed for '" + path + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw DataError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
  }
}

void atomic_write_text(const std::string& path, const std::string& content) {
  atomic_write_file(path, [&](std::ostream& out) { out << content; });
}

// --- SHA-256 -----------------------------------------------------------------

namespace {

struct Sha256 {
  std::uint32_t h[8] = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
                        0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
  unsigned char buffer[64];
  std::size_t buffered = 0;
  std::uint64_t total_bits = 0;

  static std::uint32_t rotr(std::uint32_t x, int n) {
    return (x >> n) | (x << (32 - n));
  }

  void process(const unsigned char* p) {
    static const std::uint32_t k[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
        0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
        0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
        0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
        0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
        0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
        0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
        0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
        0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
        0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i) {
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    }
    for (int i = 16; i < 64; ++i) {
      std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3];
    std::uint32_t e = h[4], f = h[5], g = h[6], hh = h[7];
    for (int i = 0; i < 64; ++i) {
      std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      std::uint32_t ch = (e & f) ^ (~e & g);
      std::uint32_t temp1 = hh + s1 + ch + k[i] + w[i];
      std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      std::uint32_t temp2 = s0 + maj;
      hh = g;
      g = f;
      f = e;
      e = d + temp1;
      d = c;
      c = b;
      b = a;
      a = temp1 + temp2;
    }
    h[0] += a; h[1] += b; h[2] += c; h[3] += d;
    h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
  }

  void update(const void* data, std::size_t size) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    total_bits += static_cast<std::uint64_t>(size) * 8;
    while (size > 0) {
      std::size_t take = std::min(size, 64 - buffered);
      std::memcpy(buffer + buffered, p, take);
      buffered += take;
      p += take;
      size -= take;
      if (buffered == 64) {
        process(buffer);
        buffered = 0;
      }
    }
  }

  std::string finish() {
    std::uint64_t bits = total_bits;
    unsigned char pad = 0x80;
    update(&pad, 1);
    unsigned char zero = 0;
    while (buffered != 56) update(&zero, 1);
    unsigned char len[8];
    for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(len, 8);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint32_t v : h) {
      for (int shift = 28; shift >= 0; shift -= 4) out.push_back(hex[(v >> shift) & 0xF]);
    }
    return out;
  }
};

}  // namespace

std::string sha256_hex(const void* data, std::size_t size) {
  Sha256 state;
  state.update(data, size);
  return state.finish();
}

std::string sha256_hex(const std::string& data) {
  return sha256_hex(data.data(), data.size());
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for hashing");
  Sha256 state;
  char chunk[65536];
  while (in) {
    in.read(chunk, sizeof(chunk));
    std::streamsize got = in.gcount();
    if (got > 0) state.update(chunk, static_cast<std::size_t>(got));
  }
  return state.finish();
}

std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

// --- RepSet files --------------------------------------------------------------

void write_repset(const RepSet& reps, const std::string& path) {
  validate_repset(reps);
  std::string base = std::filesystem::path(path).filename().string();
  std::string bin_name = base + ".bin";
  std::string rows_name = base + ".rows";
  std::filesystem::path dir = std::filesystem::path(path).parent_path();

  json manifest;
  manifest["model_id"] = reps.model_id;
  manifest["layer"] = reps.layer;
  manifest["n_rows"] = reps.n_rows();
  manifest["dim"] = reps.dim();
  manifest["dtype"] = "f64le";
  manifest["matrix_file"] = bin_name;
  manifest["rows_file"] = rows_name;

  atomic_write_file((dir / bin_name).string(), [&](std::ostream& out) {
    write_f64le_block(out, reps.matrix.data().data(), reps.matrix.data().size());
  });
  atomic_write_file((dir / rows_name).string(), [&](std::ostream& out) {
    for (const RepRow& row : reps.rows) {
      out << row.example_id << '\t' << row.position << '\t' << row.token_id << '\n';
    }
  });
  atomic_write_text(path, manifest.dump(2) + "\n");
}

RepSet read_repset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open repset manifest '" + path + "'");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ParseError("repset manifest '" + path + "': " + e.what());
  }

  RepSet reps;
  std::string bin_name, rows_name, dtype;
  std::size_t n_rows = 0, dim = 0;
  try {
    reps.model_id = manifest.at("model_id").get<std::string>();
    reps.layer = manifest.at("layer").get<std::int32_t>();
    n_rows = manifest.at("n_rows").get<std::size_t>();
    dim = manifest.at("dim").get<std::size_t>();
    dtype = manifest.at("dtype").get<std::string>();
    bin_name = manifest.at("matrix_file").get<std::string>();
    rows_name = manifest.at("rows_file").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError("repset manifest '" + path + "': " + e.what());
  }
  if (dtype != "f64le") {
    throw DataError("repset manifest '" + path + "': unsupported dtype '" + dtype + "'");
  }
  if (n_rows == 0 || dim == 0) {
    throw DataError("repset manifest '" + path + "': n_rows and dim must be >= 1");
  }

  std::filesystem::path dir = std::filesystem::path(path).parent_path();
  std::string bin_path = (dir / bin_name).string();
  std::string rows_path = (dir / rows_name).string();

  std::uintmax_t expected = static_cast<std::uintmax_t>(n_rows) * dim * sizeof(double);
  std::error_code ec;
  std::uintmax_t actual = std::filesystem::file_size(bin_path, ec);
  if (ec) throw DataError("cannot stat repset matrix file '" + bin_path + "'");
  if (actual != expected) {
    throw DataError("repset matrix file '" + bin_path + "': expected " +
                    std::to_string(expected) + " bytes, found " +
                    std::to_string(actual));
  }

  std::vector<double> data(n_rows * dim);
  {
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw DataError("cannot open repset matrix file '" + bin_path + "'");
    read_f64le_block(bin, data.data(), data.size());
  }
  reps.matrix = Matrix(n_rows, dim, std::move(data));

  std::ifstream rows(rows_path);
  if (!rows) throw DataError("cannot open repset rows file '" + rows_path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(rows, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t tab1 = line.find('\t');
    std::size_t tab2 = tab1 == std::string::npos ? std::string::npos
                                                 : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos) {
      throw ParseError("repset rows file '" + rows_path + "' line " +
                       std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    RepRow row;
    row.example_id = line.substr(0, tab1);
    try {
      row.position = std::stoi(line.substr(tab1 + 1, tab2 - tab1 - 1));
      row.token_id = std::stoi(line.substr(tab2 + 1));
    } catch (const std::exception&) {
      throw ParseError("repset rows file '" + rows_path + "' line " +
                       std::to_string(line_no) + ": invalid integer field");
    }
    reps.rows.push_back(std::move(row));
  }
  if (reps.rows.size() != n_rows) {
    throw DataError("repset rows file '" + rows_path + "': expected " +
                    std::to_string(n_rows) + " rows, found " +
                    std::to_string(reps.rows.size()));
  }
  validate_repset(reps);
  return reps;
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
  json obj;
  obj["tool_version"] = manifest.tool_version;
  obj["command_line"] = manifest.command_line;
  json seeds = json::object();
  for (const auto& [name, value] : manifest.seeds) seeds[name] = value;
  obj["seeds"] = seeds;
  json inputs = json::array();
  for (const ManifestEntry& e : manifest.inputs) {
    inputs.push_back({{"path", e.path}, {"sha256", e.sha256}});
  }
  obj["inputs"] = inputs;
  json outputs = json::array();
  for (const ManifestEntry& e : manifest.outputs) {
    outputs.push_back({{"path", e.path}, {"sha256", e.sha256}});
  }
  obj["outputs"] = outputs;
  obj["duration_seconds"] = manifest.duration_seconds;
  atomic_write_text(path, obj.dump(2) + "\n");
}

}  // namespace subpop
