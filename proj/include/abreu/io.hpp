#pragma once

// Persistence: CSV tables and field dumps, each tagged with the run's config hash.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "abreu/error.hpp"
#include "abreu/grid.hpp"

namespace abreu {

class OutputError : public Error {
public:
  using Error::Error;
};

/// 64-bit FNV-1a, as 16 lowercase hex digits.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Round-trippable, locale-independent number text.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string hash_header_line(const std::string& hash) { return "# config_hash=" + hash; }

class CsvWriter {
public:
  CsvWriter(const std::filesystem::path& path, const std::string& hash, const std::vector<std::string>& columns)
      : out_(path, std::ios::binary), width_(columns.size()) {
    if (!out_) throw OutputError("cannot open " + path.string() + " for writing");
    out_ << hash_header_line(hash) << '\n';
    row(columns);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) throw OutputError("CSV row width mismatch");
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

private:
  std::ofstream out_;
  std::size_t width_;
};

struct CsvTable {
  std::string hash;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    throw OutputError("missing CSV column " + name);
  }
  std::vector<double> numbers(const std::string& name) const {
    const int c = column_index(name);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(std::strtod(r[c].c_str(), nullptr));
    return out;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw OutputError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# config_hash=", 0) != 0)
    throw OutputError(path.string() + " lacks a config hash header");
  t.hash = line.substr(std::strlen("# config_hash="));
  if (!std::getline(in, line)) throw OutputError(path.string() + " lacks a column header");
  t.columns = split_csv_line(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split_csv_line(line));
  return t;
}

/// index,x,y,value for every active node.
inline void write_field_csv(const std::filesystem::path& path, const ScalarField& f, const std::string& hash) {
  CsvWriter w(path, hash, {"index", "x", "y", "value"});
  const Grid& g = f.grid();
  for (Index k = 0; k < g.size(); ++k) {
    if (!g.active(k)) continue;
    const Vec2 p = g.position(k);
    w.row({std::to_string(k), fmt(p.x()), fmt(p.y()), fmt(f[k])});
  }
}

/// Binary layout: "ABRF", 16 hash characters, int32 nx, int32 ny, float64
/// spacing, origin x, origin y, then nx*ny float64 values in row-major order
/// (NaN at exterior nodes). Native byte order.
inline void write_field_binary(const std::filesystem::path& path, const ScalarField& f, const std::string& hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw OutputError("cannot open " + path.string() + " for writing");
  const Grid& g = f.grid();
  std::string tag = hash;
  tag.resize(16, ' ');
  out.write("ABRF", 4);
  out.write(tag.data(), 16);
  const std::int32_t nx = g.nx(), ny = g.ny();
  out.write(reinterpret_cast<const char*>(&nx), sizeof nx);
  out.write(reinterpret_cast<const char*>(&ny), sizeof ny);
  const double head[3] = {g.spacing(), g.origin().x(), g.origin().y()};
  out.write(reinterpret_cast<const char*>(head), sizeof head);
  for (Index k = 0; k < g.size(); ++k) {
    const double v = g.active(k) ? f[k] : std::nan("");
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
}

struct FieldDump {
  std::string hash;
  int nx = 0, ny = 0;
  double spacing = 0;
  Vec2 origin{0, 0};
  std::vector<double> values;
};

inline FieldDump read_field_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw OutputError("cannot read " + path.string());
  char magic[4];
  char tag[16];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "ABRF", 4) != 0) throw OutputError(path.string() + " is not a field dump");
  in.read(tag, 16);
  FieldDump d;
  d.hash.assign(tag, 16);
  std::int32_t nx = 0, ny = 0;
  in.read(reinterpret_cast<char*>(&nx), sizeof nx);
  in.read(reinterpret_cast<char*>(&ny), sizeof ny);
  double head[3];
  in.read(reinterpret_cast<char*>(head), sizeof head);
  if (!in || nx <= 0 || ny <= 0) throw OutputError(path.string() + " has a corrupt header");
  d.nx = nx;
  d.ny = ny;
  d.spacing = head[0];
  d.origin = Vec2(head[1], head[2]);
  d.values.resize(static_cast<std::size_t>(nx) * ny);
  in.read(reinterpret_cast<char*>(d.values.data()), static_cast<std::streamsize>(d.values.size() * sizeof(double)));
  if (!in) throw OutputError(path.string() + " is truncated");
  return d;
}

/// Hash found in the header of an output file (CSV, field dump, JSON or SVG).
inline std::string output_hash(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return read_csv(path).hash;
  if (ext == ".bin") return read_field_binary(path).hash;
  std::ifstream in(path, std::ios::binary);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string key = "config_hash";
  const auto p = text.find(key);
  if (p == std::string::npos) throw OutputError(path.string() + " carries no config hash");
  std::size_t q = p + key.size();
  while (q < text.size() && !std::isxdigit(static_cast<unsigned char>(text[q]))) ++q;
  return text.substr(q, 16);
}

/// Throws unless every output file in dir carries the same hash; returns it.
inline std::string verify_output_hashes(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string hash;
  for (const auto& f : files) {
    const auto ext = f.extension().string();
    if (ext != ".csv" && ext != ".bin" && ext != ".json" && ext != ".svg") continue;
    const std::string h = output_hash(f);
    if (hash.empty()) hash = h;
    else if (h != hash) throw OutputError("config hash mismatch in " + f.filename().string());
  }
  return hash;
}

} // namespace abreu
