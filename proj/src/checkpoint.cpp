#include "afftrack/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "afftrack/io.hpp"

namespace afftrack::nn {

namespace {
constexpr const char* kMagic = "afftrack-checkpoint";
constexpr int kVersion = 1;
}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out << kMagic << ' ' << kVersion << '\n';
  for (const auto& [k, v] : ckpt.meta) out << "meta " << k << ' ' << v << '\n';
  for (const auto& t : ckpt.tensors) {
    out << "tensor " << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
    bool first = true;
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        if (!first) out << ' ';
        out << format_double(t.value(r, c));
        first = false;
      }
    out << '\n';
  }
  out << "end\n";
}

Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint ckpt;
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError("empty checkpoint", lineno);
  {
    std::istringstream ss(line);
    std::string magic;
    int version = 0;
    ss >> magic >> version;
    if (magic != kMagic) throw ParseError("not a checkpoint file", lineno);
    if (version != kVersion) throw ParseError("unsupported checkpoint version", lineno);
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line == "end") return ckpt;
    std::istringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "meta") {
      std::string key;
      ss >> key;
      std::string value;
      std::getline(ss >> std::ws, value);
      ckpt.meta[key] = value;
    } else if (kind == "tensor") {
      NamedTensor t;
      long rows = -1, cols = -1;
      ss >> t.name >> rows >> cols;
      if (t.name.empty() || rows < 0 || cols < 0) throw ParseError("bad tensor header", lineno);
      std::string data;
      if (!std::getline(in, data)) throw ParseError("missing tensor data", lineno + 1);
      ++lineno;
      t.value.resize(rows, cols);
      std::istringstream ds(data);
      for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) {
          std::string tok;
          if (!(ds >> tok)) throw ParseError("tensor " + t.name + " truncated", lineno);
          double v = 0.0;
          auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
          if (res.ec != std::errc()) throw ParseError("bad number '" + tok + "'", lineno);
          t.value(r, c) = v;
        }
      ckpt.tensors.push_back(std::move(t));
    } else {
      throw ParseError("unexpected record '" + kind + "'", lineno);
    }
  }
  throw ParseError("missing end marker", lineno);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(in);
}

void store_params(Checkpoint& ckpt, const ParamList& params) {
  for (const Param* p : params) ckpt.tensors.push_back({p->name, p->value});
}

void restore_params(const Checkpoint& ckpt, const ParamList& params) {
  for (Param* p : params) {
    const NamedTensor* t = ckpt.find(p->name);
    if (!t) throw ConfigError("checkpoint is missing tensor " + p->name);
    if (t->value.rows() != p->value.rows() || t->value.cols() != p->value.cols())
      throw ConfigError("checkpoint tensor " + p->name + " has the wrong shape");
    p->value = t->value;
  }
}

}  // namespace afftrack::nn
