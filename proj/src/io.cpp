#include "weakflow/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace weakflow::io {

static_assert(std::endian::native == std::endian::little,
              "binary exports assume a little-endian host");

std::string fmt_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string csv_escape(const std::string& field) {
  const bool need = field.find_first_of(",\"\n\r") != std::string::npos;
  if (!need) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

CsvWriter::CsvWriter(const std::filesystem::path& path) : path_(path) {
  std::filesystem::create_directories(path.parent_path());
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) buf_ += ',';
    buf_ += csv_escape(fields[i]);
  }
  buf_ += "\r\n";
}

CsvWriter::~CsvWriter() {
  std::ofstream os(path_, std::ios::binary);
  os.write(buf_.data(), std::streamsize(buf_.size()));
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os.write(content.data(), std::streamsize(content.size()));
}

std::string params_digest(const std::map<std::string, std::string>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [k, v] : params) {
    mix(k);
    mix("=");
    mix(v);
    mix("\n");
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_resolved_config(const std::filesystem::path& path,
                           const std::map<std::string, std::string>& params) {
  std::string out;
  for (const auto& [k, v] : params) out += k + " = " + v + "\n";
  write_text_file(path, out);
}

void write_histogram_csv(const std::filesystem::path& path, const ensemble::Histogram& hist) {
  CsvWriter csv(path);
  csv.row({"bin_left", "bin_right", "count", "density"});
  const Eigen::ArrayXd dens = hist.density();
  for (int i = 0; i < hist.counts.size(); ++i)
    csv.row({fmt_g17(hist.edges[i]), fmt_g17(hist.edges[i + 1]), fmt_g17(hist.counts[i]),
             fmt_g17(dens[i])});
}

void write_field_map_csv(const std::filesystem::path& path, const fields::FieldMap& map) {
  CsvWriter csv(path);
  csv.row({"rho", "z", "V", "A_z", "n_roots", "defined_flag"});
  for (const auto& s : map.samples)
    csv.row({fmt_g17(s.rho), fmt_g17(s.z), fmt_g17(s.V), fmt_g17(s.A_z),
             std::to_string(s.n_roots),
             s.status == fields::SampleStatus::defined ? "1" : "0"});
}

std::string field_map_plot_script(const std::string& csv_name, const std::string& png_name) {
  std::string s;
  s += "set terminal pngcairo size 960,720\n";
  s += "set output '" + png_name + "'\n";
  s += "set datafile separator ','\n";
  s += "set view map\n";
  s += "set xlabel 'z'\n";
  s += "set ylabel 'rho'\n";
  s += "set title 'scalar potential V'\n";
  s += "splot '" + csv_name + "' every ::1 using 2:1:3 with pm3d notitle\n";
  return s;
}

void write_joint_state(const std::filesystem::path& path, const coupling::JointState2D& state) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  auto put_i64 = [&](std::int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); };
  auto put_f64 = [&](double v) { os.write(reinterpret_cast<const char*>(&v), 8); };
  put_i64(state.grid.n_z);
  put_i64(state.grid.n_zp);
  put_f64(state.grid.z_lo);
  put_f64(state.grid.dz());
  put_f64(state.grid.zp_lo);
  put_f64(state.grid.dzp());
  put_f64(state.grid.dx);
  put_f64(state.grid.dy);
  put_f64(state.log_scale);
  for (int i = 0; i < state.grid.n_z; ++i)
    for (int j = 0; j < state.grid.n_zp; ++j) {
      put_f64(state.amp(i, j).real());
      put_f64(state.amp(i, j).imag());
    }
}

coupling::JointState2D read_joint_state(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  auto get_i64 = [&]() {
    std::int64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  auto get_f64 = [&]() {
    double v;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  coupling::JointState2D s;
  const std::int64_t nz = get_i64(), nzp = get_i64();
  s.grid.n_z = int(nz);
  s.grid.n_zp = int(nzp);
  s.grid.z_lo = get_f64();
  const double dz = get_f64();
  s.grid.zp_lo = get_f64();
  const double dzp = get_f64();
  s.grid.dx = get_f64();
  s.grid.dy = get_f64();
  s.grid.z_hi = s.grid.z_lo + dz * (nz - 1);
  s.grid.zp_hi = s.grid.zp_lo + dzp * (nzp - 1);
  s.log_scale = get_f64();
  s.amp.resize(nz, nzp);
  for (std::int64_t i = 0; i < nz; ++i)
    for (std::int64_t j = 0; j < nzp; ++j) {
      const double re = get_f64();
      const double im = get_f64();
      s.amp(i, j) = cplx(re, im);
    }
  if (!is) throw std::runtime_error("truncated joint-state file " + path.string());
  return s;
}

}  // namespace weakflow::io
