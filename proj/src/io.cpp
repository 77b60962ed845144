// SPDX-License-Identifier: Apache-2.0
#include "tlora/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tlora {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string records_to_csv(const std::vector<RunRecord>& records) {
  std::string out = kRunCsvHeader;
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.epoch);
    for (double v : {r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.val_mcc, r.wall_seconds}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

nlohmann::json matrix_to_json(const MatrixXd& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return j;
}

MatrixXd matrix_from_json(const nlohmann::json& j, const char* name) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw std::invalid_argument(std::string("checkpoint: matrix ") + name + " declares " +
                                shape_str(rows, cols) + " but holds " +
                                std::to_string(data.size()) + " values");
  }
  MatrixXd m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

nlohmann::json adapter_to_json(const TriAdapter<double>& ad) {
  const auto& s = ad.spec();
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["layout"] = "row-major";
  j["spec"] = {{"m", s.m},
               {"n", s.n},
               {"r1", s.r1},
               {"r2", s.r2},
               {"mode", std::string(to_string(s.mode))},
               {"init", std::string(to_string(s.init))},
               {"seed", s.seed},
               {"scale", s.scale}};
  j["A"] = matrix_to_json(ad.a());
  j["B"] = matrix_to_json(ad.b());
  j["C"] = matrix_to_json(ad.c());
  return j;
}

TriAdapter<double> adapter_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw std::invalid_argument("checkpoint: unsupported format_version " +
                                  std::to_string(version));
    }
    if (j.at("layout").get<std::string>() != "row-major") {
      throw std::invalid_argument("checkpoint: layout must be \"row-major\"");
    }
    const auto& js = j.at("spec");
    AdapterSpec spec;
    spec.m = js.at("m").get<Eigen::Index>();
    spec.n = js.at("n").get<Eigen::Index>();
    spec.r1 = js.at("r1").get<Eigen::Index>();
    spec.r2 = js.at("r2").get<Eigen::Index>();
    spec.mode = parse_train_mode(js.at("mode").get<std::string>());
    spec.init = parse_init_scheme(js.at("init").get<std::string>());
    spec.seed = js.at("seed").get<std::uint64_t>();
    spec.scale = js.value("scale", 1.0);
    return TriAdapter<double>(spec, matrix_from_json(j.at("A"), "A"),
                              matrix_from_json(j.at("B"), "B"), matrix_from_json(j.at("C"), "C"));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint: ") + e.what());
  }
}

void save_adapter(const std::filesystem::path& path, const TriAdapter<double>& ad) {
  write_text(path, adapter_to_json(ad).dump(1) + "\n");
}

TriAdapter<double> load_adapter(const std::filesystem::path& path) {
  return adapter_from_json(nlohmann::json::parse(read_text(path)));
}

namespace {
std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace

std::string strip_wall_columns(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::vector<bool> keep;
  std::string out;
  bool header = true;
  while (std::getline(in, line)) {
    const auto cells = split(line, ',');
    if (header) {
      for (const auto& c : cells) keep.push_back(c.find("wall") == std::string::npos);
      header = false;
    }
    bool first = true;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i < keep.size() && !keep[i]) continue;
      if (!first) out += ',';
      out += cells[i];
      first = false;
    }
    out += '\n';
  }
  return out;
}

nlohmann::json strip_wall_keys(nlohmann::json j) {
  if (j.is_object()) {
    nlohmann::json out = nlohmann::json::object();
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key().find("wall") != std::string::npos) continue;
      out[it.key()] = strip_wall_keys(it.value());
    }
    return out;
  }
  if (j.is_array()) {
    for (auto& v : j) v = strip_wall_keys(v);
  }
  return j;
}

}  // namespace tlora
