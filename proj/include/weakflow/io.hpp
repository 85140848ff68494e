#pragma once

// File formats: RFC-4180 CSV, flat key=value config echoes, gnuplot scripts,
// and the binary joint-state table. Everything written here must be
// byte-reproducible for identical inputs: fixed float formatting (%.17g),
// sorted keys, no timestamps.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "weakflow/coupling.hpp"
#include "weakflow/ensemble.hpp"
#include "weakflow/fields.hpp"

namespace weakflow::io {

std::string fmt_g17(double x);
std::string csv_escape(const std::string& field);

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  void row(const std::vector<std::string>& fields);
  ~CsvWriter();

 private:
  std::string buf_;
  std::filesystem::path path_;
};

void write_text_file(const std::filesystem::path& path, const std::string& content);

// FNV-1a 64-bit over the canonical "key=value\n" serialization (sorted keys).
std::string params_digest(const std::map<std::string, std::string>& params);

void write_resolved_config(const std::filesystem::path& path,
                           const std::map<std::string, std::string>& params);

// histogram CSV: bin_left, bin_right, count, density
void write_histogram_csv(const std::filesystem::path& path, const ensemble::Histogram& hist);

// field map CSV: rho, z, V, A_z, n_roots, defined_flag
void write_field_map_csv(const std::filesystem::path& path, const fields::FieldMap& map);

// companion gnuplot heatmap script for a field-map CSV
std::string field_map_plot_script(const std::string& csv_name, const std::string& png_name);

// Joint-state binary: little-endian header
//   int64 n_z, int64 n_zp,
//   f64 z_lo, f64 dz, f64 zp_lo, f64 dzp, f64 dx, f64 dy, f64 log_scale,
// then n_z * n_zp complex pairs (f64 re, f64 im), row-major over z then z'.
void write_joint_state(const std::filesystem::path& path, const coupling::JointState2D& state);
coupling::JointState2D read_joint_state(const std::filesystem::path& path);

}  // namespace weakflow::io
