#include "afftrack/io.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace afftrack {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

bool skip_line(const std::string& line) {
  for (char c : line) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

double parse_num(const std::string& tok, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw ParseError("bad number '" + tok + "'", line);
  return v;
}

int parse_int(const std::string& tok, std::size_t line) {
  int v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw ParseError("bad integer '" + tok + "'", line);
  return v;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

// Parses the 11 state fields plus optional image box starting at toks[first].
// toks[first] is the class, then x y z l w h theta vx vy score.
void parse_state_fields(const std::vector<std::string>& toks, std::size_t first, std::size_t line,
                        ObjectState& s, std::optional<Box2D>& box) {
  const std::size_t n = toks.size() - first;
  if (n != 11 && n != 15)
    throw ParseError("expected 11 or 15 state fields, got " + std::to_string(n), line);
  s.class_id = parse_int(toks[first], line);
  double* dst[] = {&s.x, &s.y, &s.z, &s.l, &s.w, &s.h, &s.theta, &s.vx, &s.vy, &s.score};
  for (std::size_t i = 0; i < 10; ++i) *dst[i] = parse_num(toks[first + 1 + i], line);
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(e.field(), std::string(e.what()) + " (line " + std::to_string(line) + ")");
  }
  box.reset();
  if (n == 15) {
    Box2D b{parse_num(toks[first + 11], line), parse_num(toks[first + 12], line),
            parse_num(toks[first + 13], line), parse_num(toks[first + 14], line)};
    b.validate();
    box = b;
  }
}

void write_state_fields(std::ostream& out, const ObjectState& s, const std::optional<Box2D>& box) {
  out << s.class_id;
  for (double v : {s.x, s.y, s.z, s.l, s.w, s.h, s.theta, s.vx, s.vy, s.score})
    out << ' ' << format_double(v);
  if (box) {
    for (double v : {box->u1, box->v1, box->u2, box->v2}) out << ' ' << format_double(v);
  }
}

template <typename T>
void place_in_frame(std::vector<std::vector<T>>& seq, int frame, int& last_frame, std::size_t line,
                    T value) {
  if (frame < 0) throw ParseError("negative frame index", line);
  if (frame < last_frame) throw ParseError("frame indices must be non-decreasing", line);
  last_frame = frame;
  if (seq.size() <= static_cast<std::size_t>(frame)) seq.resize(frame + 1);
  seq[frame].push_back(std::move(value));
}

}  // namespace

DetectionSequence parse_detections(std::istream& in) {
  DetectionSequence seq;
  std::string text;
  std::size_t line = 0;
  int last_frame = 0;
  while (std::getline(in, text)) {
    ++line;
    if (skip_line(text)) continue;
    auto toks = split_ws(text);
    if (toks.size() < 2) throw ParseError("truncated record", line);
    Detection d;
    d.frame = parse_int(toks[0], line);
    parse_state_fields(toks, 1, line, d.state, d.box2d);
    const std::size_t frame_size =
        d.frame >= 0 && static_cast<std::size_t>(d.frame) < seq.size() ? seq[d.frame].size() : 0;
    d.source_id = static_cast<int>(frame_size);
    place_in_frame(seq, d.frame, last_frame, line, d);
  }
  return seq;
}

DetectionSequence load_detections(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_detections(in);
}

void write_detections(std::ostream& out, const DetectionSequence& seq) {
  for (const auto& frame : seq) {
    for (const auto& d : frame) {
      out << d.frame << ' ';
      write_state_fields(out, d.state, d.box2d);
      out << '\n';
    }
  }
}

void save_detections(const std::filesystem::path& path, const DetectionSequence& seq) {
  auto out = open_out(path);
  write_detections(out, seq);
}

LabeledSequence parse_tracks(std::istream& in) {
  LabeledSequence seq;
  std::string text;
  std::size_t line = 0;
  int last_frame = 0;
  while (std::getline(in, text)) {
    ++line;
    if (skip_line(text)) continue;
    auto toks = split_ws(text);
    if (toks.size() < 3) throw ParseError("truncated record", line);
    LabeledBox b;
    b.id = parse_int(toks[0], line);
    b.frame = parse_int(toks[1], line);
    parse_state_fields(toks, 2, line, b.state, b.box2d);
    place_in_frame(seq, b.frame, last_frame, line, b);
  }
  return seq;
}

LabeledSequence load_tracks(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_tracks(in);
}

void write_tracks(std::ostream& out, const LabeledSequence& seq) {
  for (const auto& frame : seq) {
    for (const auto& b : frame) {
      out << b.id << ' ' << b.frame << ' ';
      write_state_fields(out, b.state, b.box2d);
      out << '\n';
    }
  }
}

void save_tracks(const std::filesystem::path& path, const LabeledSequence& seq) {
  auto out = open_out(path);
  write_tracks(out, seq);
}

std::vector<std::vector<Detection2D>> load_detections_2d(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<std::vector<Detection2D>> seq;
  std::string text;
  std::size_t line = 0;
  int last_frame = 0;
  while (std::getline(in, text)) {
    ++line;
    if (skip_line(text)) continue;
    auto toks = split_ws(text);
    if (toks.size() != 7) throw ParseError("expected 7 fields", line);
    Detection2D d;
    d.frame = parse_int(toks[0], line);
    d.class_id = parse_int(toks[1], line);
    d.score = parse_num(toks[2], line);
    d.box = {parse_num(toks[3], line), parse_num(toks[4], line), parse_num(toks[5], line),
             parse_num(toks[6], line)};
    d.box.validate();
    if (d.class_id < 0) throw ValidationError("class", "must be non-negative");
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw ValidationError("score", "must lie in [0, 1]");
    const std::size_t frame_size =
        d.frame >= 0 && static_cast<std::size_t>(d.frame) < seq.size() ? seq[d.frame].size() : 0;
    d.source_id = static_cast<int>(frame_size);
    place_in_frame(seq, d.frame, last_frame, line, d);
  }
  return seq;
}

void save_detections_2d(const std::filesystem::path& path,
                        const std::vector<std::vector<Detection2D>>& seq) {
  auto out = open_out(path);
  for (const auto& frame : seq)
    for (const auto& d : frame) {
      out << d.frame << ' ' << d.class_id << ' ' << format_double(d.score);
      for (double v : {d.box.u1, d.box.v1, d.box.u2, d.box.v2}) out << ' ' << format_double(v);
      out << '\n';
    }
}

PointCloud load_point_cloud(const std::filesystem::path& path) {
  auto in = open_in(path);
  PointCloud cloud;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (skip_line(text)) continue;
    auto toks = split_ws(text);
    if (toks.size() != 5) throw ParseError("expected 5 fields", line);
    cloud.points.push_back({parse_num(toks[0], line), parse_num(toks[1], line),
                            parse_num(toks[2], line), parse_num(toks[3], line),
                            parse_num(toks[4], line)});
  }
  cloud.validate();
  return cloud;
}

void save_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  auto out = open_out(path);
  for (const auto& p : cloud.points)
    out << format_double(p.x) << ' ' << format_double(p.y) << ' ' << format_double(p.z) << ' '
        << format_double(p.r) << ' ' << format_double(p.dt) << '\n';
}

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string text;
  std::size_t line = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, text)) {
    ++line;
    if (auto hash = text.find('#'); hash != std::string::npos) text.resize(hash);
    text = trim(text);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line);
    auto key = trim(text.substr(0, eq));
    auto value = trim(text.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", line);
    kv[key] = value;
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_key_values(in);
}

namespace {

double kv_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

long long kv_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  return out;
}

bool kv_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

std::vector<std::string> apply_tracker_config(const KeyValues& kv, TrackerConfig& cfg) {
  std::vector<std::string> used;
  const std::map<std::string, double*> doubles = {
      {"tau_fuse", &cfg.tau_fuse},       {"tau_2d", &cfg.tau_2d},
      {"tau_3d", &cfg.tau_3d},           {"tau_rej", &cfg.tau_rej},
      {"tau_gt", &cfg.tau_gt},           {"min_affinity", &cfg.min_affinity},
      {"kf_q_pos", &cfg.kf_q_pos},       {"kf_q_size", &cfg.kf_q_size},
      {"kf_q_yaw", &cfg.kf_q_yaw},       {"kf_q_vel", &cfg.kf_q_vel},
      {"kf_r_pos", &cfg.kf_r_pos},       {"kf_r_size", &cfg.kf_r_size},
      {"kf_r_yaw", &cfg.kf_r_yaw},       {"kf_init_vel_var", &cfg.kf_init_vel_var}};
  for (const auto& [key, value] : kv) {
    if (auto it = doubles.find(key); it != doubles.end()) {
      *it->second = kv_double(key, value);
    } else if (key == "max_misses") {
      cfg.max_misses = static_cast<int>(kv_int(key, value));
    } else if (key == "min_hits") {
      cfg.min_hits = static_cast<int>(kv_int(key, value));
    } else if (key == "matcher") {
      cfg.matcher = parse_matcher(value);
    } else if (key == "motion") {
      cfg.motion = parse_motion(value);
    } else if (key == "affinity") {
      cfg.affinity = parse_affinity(value);
    } else if (key == "rejection") {
      cfg.rejection = kv_bool(key, value);
    } else if (key == "class_gating") {
      cfg.class_gating = kv_bool(key, value);
    } else if (key == "gate_before_solve") {
      cfg.gate_before_solve = kv_bool(key, value);
    } else if (auto dot = key.find('.'); dot != std::string::npos) {
      const auto base = key.substr(0, dot);
      if (base != "tau_fuse" && base != "tau_2d" && base != "tau_3d" && base != "tau_rej") continue;
      const int cls = static_cast<int>(kv_int(key, key.substr(dot + 1)));
      auto& t = cfg.per_class[cls];
      const double v = kv_double(key, value);
      if (base == "tau_fuse") t.tau_fuse = v;
      if (base == "tau_2d") t.tau_2d = v;
      if (base == "tau_3d") t.tau_3d = v;
      if (base == "tau_rej") t.tau_rej = v;
    } else {
      continue;
    }
    used.push_back(key);
  }
  cfg.validate();
  return used;
}

std::vector<std::string> apply_train_config(const KeyValues& kv, TrainConfig& cfg) {
  std::vector<std::string> used;
  const std::map<std::string, double*> doubles = {
      {"focal_alpha", &cfg.focal_alpha}, {"focal_gamma", &cfg.focal_gamma},
      {"sigma_x", &cfg.sigma_x},         {"sigma_y", &cfg.sigma_y},
      {"drop_min", &cfg.drop_min},       {"drop_max", &cfg.drop_max},
      {"learning_rate", &cfg.learning_rate}};
  for (const auto& [key, value] : kv) {
    if (auto it = doubles.find(key); it != doubles.end()) {
      *it->second = kv_double(key, value);
    } else if (key == "epochs") {
      cfg.epochs = static_cast<int>(kv_int(key, value));
    } else if (key == "batch_size") {
      cfg.batch_size = static_cast<int>(kv_int(key, value));
    } else if (key == "rng_seed") {
      cfg.rng_seed = static_cast<std::uint64_t>(kv_int(key, value));
    } else {
      continue;
    }
    used.push_back(key);
  }
  cfg.validate();
  return used;
}

void write_tracker_config(std::ostream& out, const TrackerConfig& c) {
  out << "tau_fuse = " << format_double(c.tau_fuse) << '\n'
      << "tau_2d = " << format_double(c.tau_2d) << '\n'
      << "tau_3d = " << format_double(c.tau_3d) << '\n'
      << "tau_rej = " << format_double(c.tau_rej) << '\n'
      << "tau_gt = " << format_double(c.tau_gt) << '\n'
      << "max_misses = " << c.max_misses << '\n'
      << "min_hits = " << c.min_hits << '\n'
      << "matcher = " << to_string(c.matcher) << '\n'
      << "motion = " << to_string(c.motion) << '\n'
      << "affinity = " << to_string(c.affinity) << '\n'
      << "rejection = " << (c.rejection ? "true" : "false") << '\n'
      << "class_gating = " << (c.class_gating ? "true" : "false") << '\n'
      << "gate_before_solve = " << (c.gate_before_solve ? "true" : "false") << '\n'
      << "min_affinity = " << format_double(c.min_affinity) << '\n';
  for (const auto& [cls, t] : c.per_class) {
    if (t.tau_fuse) out << "tau_fuse." << cls << " = " << format_double(*t.tau_fuse) << '\n';
    if (t.tau_2d) out << "tau_2d." << cls << " = " << format_double(*t.tau_2d) << '\n';
    if (t.tau_3d) out << "tau_3d." << cls << " = " << format_double(*t.tau_3d) << '\n';
    if (t.tau_rej) out << "tau_rej." << cls << " = " << format_double(*t.tau_rej) << '\n';
  }
}

void write_train_config(std::ostream& out, const TrainConfig& c) {
  out << "focal_alpha = " << format_double(c.focal_alpha) << '\n'
      << "focal_gamma = " << format_double(c.focal_gamma) << '\n'
      << "sigma_x = " << format_double(c.sigma_x) << '\n'
      << "sigma_y = " << format_double(c.sigma_y) << '\n'
      << "drop_min = " << format_double(c.drop_min) << '\n'
      << "drop_max = " << format_double(c.drop_max) << '\n'
      << "epochs = " << c.epochs << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "learning_rate = " << format_double(c.learning_rate) << '\n'
      << "rng_seed = " << c.rng_seed << '\n';
}

}  // namespace afftrack
