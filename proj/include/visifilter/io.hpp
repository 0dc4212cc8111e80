#pragma once
// Scenario files (JSON, schema_version 1), trace.csv and metrics.json.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "visifilter/sim.hpp"

namespace visifilter {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Invalid scenario document; the message names the field and, when it can
/// be located, the line.
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Best-effort line lookup of a key in the original text.
inline int line_of_key(const std::string& text, const std::string& key) {
  if (text.empty()) return 0;
  const auto pos = text.find("\"" + key + "\"");
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Reader {
 public:
  explicit Reader(const std::string& text) : text_(text) {}

  [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
    const std::string key = path.substr(path.find_last_of('.') + 1);
    const int line = line_of_key(text_, key.substr(0, key.find('[')));
    throw ScenarioError("field '" + path + "': " + msg + (line > 0 ? " (line " + std::to_string(line) + ")" : ""));
  }

  void object(const Json& j, const std::string& path, std::initializer_list<const char*> allowed) const {
    if (!j.is_object()) fail(path, "expected an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
      if (!ok.count(k)) fail(path.empty() ? k : path + "." + k, "unknown key");
    }
  }

  double number(const Json& j, const std::string& path) const {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
  }

  std::int64_t integer(const Json& j, const std::string& path) const {
    if (!j.is_number_integer()) fail(path, "expected an integer");
    return j.get<std::int64_t>();
  }

  std::uint64_t seed(const Json& j, const std::string& path) const {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
      fail(path, "expected a nonnegative integer seed");
    }
    return j.get<std::uint64_t>();
  }

  bool boolean(const Json& j, const std::string& path) const {
    if (!j.is_boolean()) fail(path, "expected true or false");
    return j.get<bool>();
  }

  std::string string(const Json& j, const std::string& path) const {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
  }

  Vec vector(const Json& j, const std::string& path, Eigen::Index expected = -1) const {
    if (!j.is_array()) fail(path, "expected an array of numbers");
    if (expected >= 0 && static_cast<Eigen::Index>(j.size()) != expected) {
      fail(path, "expected " + std::to_string(expected) + " entries, got " + std::to_string(j.size()));
    }
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], path + "[" + std::to_string(i) + "]");
    return v;
  }

  Vec2 vec2(const Json& j, const std::string& path) const { return vector(j, path, 2); }
  Vec3 vec3(const Json& j, const std::string& path) const { return vector(j, path, 3); }

  template <class Fn>
  void opt(const Json& obj, const char* key, const std::string& path, Fn&& fn) const {
    if (obj.contains(key)) fn(obj.at(key), path.empty() ? std::string(key) : path + "." + key);
  }

 private:
  const std::string& text_;
};

inline Json to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline const char* mount_name(SensorMount m) { return m == SensorMount::kForwardX ? "forward_x" : "optical"; }

inline const char* reference_name(ReferenceKind k) {
  switch (k) {
    case ReferenceKind::kCircular:
      return "circular_tracker";
    case ReferenceKind::kWallInspection:
      return "wall_inspection";
    case ReferenceKind::kExternal:
      return "external";
    case ReferenceKind::kPiecewise:
      return "piecewise_constant";
  }
  return "?";
}

}  // namespace detail

/// Parses JSON text, reporting syntax errors with line and column.
inline Json parse_json_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t pos = std::min<std::size_t>(e.byte, text.size());
    int line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < pos; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ScenarioError("syntax error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                        e.what());
  }
}

/// Applies one "a.b.c=value" override. The value is read as JSON when it
/// parses, otherwise as a string. Array elements are addressed by index.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ScenarioError("override '" + assignment + "': expected key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  Json* node = &doc;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string& p = parts[i];
    if (p.empty()) throw ScenarioError("override '" + assignment + "': empty path segment");
    if (node->is_array()) {
      std::size_t idx = 0;
      const auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), idx);
      if (ec != std::errc() || ptr != p.data() + p.size() || idx >= node->size()) {
        throw ScenarioError("override '" + assignment + "': bad array index '" + p + "'");
      }
      node = &(*node)[idx];
    } else {
      if (!node->is_object()) throw ScenarioError("override '" + assignment + "': '" + p + "' is not inside an object");
      node = &(*node)[p];
    }
  }
  *node = value;
}

/// Scenario from a parsed document. `text` (optional) is the source used for
/// line numbers in diagnostics.
inline Scenario scenario_from_json(const Json& doc, const std::string& text = {}) {
  const detail::Reader rd(text);
  rd.object(doc, "", {"schema_version", "name", "mode", "duration", "dt", "robot", "visibility", "world", "landmarks",
                      "filter", "reference"});
  if (!doc.contains("schema_version")) rd.fail("schema_version", "missing");
  if (rd.integer(doc.at("schema_version"), "schema_version") != kSchemaVersion) {
    rd.fail("schema_version", "unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  for (const char* k : {"duration", "robot", "visibility", "landmarks", "filter", "reference"}) {
    if (!doc.contains(k)) rd.fail(k, "missing");
  }
  Scenario sc;
  rd.opt(doc, "name", "", [&](const Json& j, const std::string& p) { sc.name = rd.string(j, p); });
  rd.opt(doc, "mode", "", [&](const Json& j, const std::string& p) {
    const std::string m = rd.string(j, p);
    if (m == "filtered") {
      sc.mode = RunMode::kFiltered;
    } else if (m == "baseline") {
      sc.mode = RunMode::kBaseline;
    } else {
      rd.fail(p, "expected \"filtered\" or \"baseline\"");
    }
  });
  sc.duration = rd.number(doc.at("duration"), "duration");
  if (!(sc.duration > 0.0)) rd.fail("duration", "must satisfy duration > 0");
  rd.opt(doc, "dt", "", [&](const Json& j, const std::string& p) {
    sc.filter.dt = rd.number(j, p);
    if (!(sc.filter.dt > 0.0)) rd.fail(p, "must satisfy dt > 0");
  });

  // robot
  {
    const Json& r = doc.at("robot");
    rd.object(r, "robot", {"model", "q0", "input_lower", "input_upper", "sensor_mount"});
    for (const char* k : {"model", "q0", "input_lower", "input_upper"}) {
      if (!r.contains(k)) rd.fail(std::string("robot.") + k, "missing");
    }
    sc.robot.model = rd.string(r.at("model"), "robot.model");
    int n = 0;
    if (sc.robot.model == "planar_cam_bot") {
      n = 3;
    } else if (sc.robot.model == "diff_drive_gimbal") {
      n = 4;
    } else {
      rd.fail("robot.model", "expected \"planar_cam_bot\" or \"diff_drive_gimbal\"");
    }
    sc.robot.q0 = rd.vector(r.at("q0"), "robot.q0", n);
    sc.robot.input_lower = rd.vector(r.at("input_lower"), "robot.input_lower", 3);
    sc.robot.input_upper = rd.vector(r.at("input_upper"), "robot.input_upper", 3);
    if (!((sc.robot.input_lower.array() <= 0.0).all() && (sc.robot.input_upper.array() >= 0.0).all())) {
      rd.fail("robot.input_lower", "input box must contain the stopping input 0");
    }
    rd.opt(r, "sensor_mount", "robot", [&](const Json& j, const std::string& p) {
      const std::string m = rd.string(j, p);
      if (m == "forward_x") {
        sc.robot.mount = SensorMount::kForwardX;
      } else if (m == "optical") {
        sc.robot.mount = SensorMount::kOptical;
      } else {
        rd.fail(p, "expected \"forward_x\" or \"optical\"");
      }
    });
  }

  // visibility
  {
    const Json& v = doc.at("visibility");
    rd.object(v, "visibility", {"model", "psi", "range", "fx", "fy", "cx", "cy", "width", "height", "r_min", "r_max"});
    if (!v.contains("model")) rd.fail("visibility.model", "missing");
    sc.visibility.model = rd.string(v.at("model"), "visibility.model");
    auto num = [&](const char* key, double& out) {
      rd.opt(v, key, "visibility", [&](const Json& j, const std::string& p) { out = rd.number(j, p); });
    };
    num("psi", sc.visibility.psi);
    num("range", sc.visibility.range);
    num("fx", sc.visibility.intrinsics.fx);
    num("fy", sc.visibility.intrinsics.fy);
    num("cx", sc.visibility.intrinsics.cx);
    num("cy", sc.visibility.intrinsics.cy);
    num("width", sc.visibility.intrinsics.width);
    num("height", sc.visibility.intrinsics.height);
    num("r_min", sc.visibility.r_min);
    num("r_max", sc.visibility.r_max);
    try {
      make_visibility(sc.visibility);
    } catch (const std::invalid_argument& e) {
      rd.fail("visibility.model", e.what());
    }
  }

  // world
  rd.opt(doc, "world", "", [&](const Json& w, const std::string& wp) {
    rd.object(w, wp, {"discs", "segments", "walls", "bounds"});
    rd.opt(w, "discs", wp, [&](const Json& arr, const std::string& p) {
      if (!arr.is_array()) rd.fail(p, "expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string ip = p + "[" + std::to_string(i) + "]";
        rd.object(arr[i], ip, {"center", "radius"});
        Disc d;
        if (!arr[i].contains("center") || !arr[i].contains("radius")) rd.fail(ip, "needs center and radius");
        d.center = rd.vec2(arr[i].at("center"), ip + ".center");
        d.radius = rd.number(arr[i].at("radius"), ip + ".radius");
        if (!(d.radius >= 0.0)) rd.fail(ip + ".radius", "must be nonnegative");
        sc.world.discs.push_back(d);
      }
    });
    rd.opt(w, "segments", wp, [&](const Json& arr, const std::string& p) {
      if (!arr.is_array()) rd.fail(p, "expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string ip = p + "[" + std::to_string(i) + "]";
        rd.object(arr[i], ip, {"a", "b", "thickness"});
        if (!arr[i].contains("a") || !arr[i].contains("b")) rd.fail(ip, "needs endpoints a and b");
        Segment s;
        s.a = rd.vec2(arr[i].at("a"), ip + ".a");
        s.b = rd.vec2(arr[i].at("b"), ip + ".b");
        rd.opt(arr[i], "thickness", ip, [&](const Json& j, const std::string& pp) { s.thickness = rd.number(j, pp); });
        if (!(s.thickness >= 0.0)) rd.fail(ip + ".thickness", "must be nonnegative");
        sc.world.segments.push_back(s);
      }
    });
    rd.opt(w, "walls", wp, [&](const Json& arr, const std::string& p) {
      if (!arr.is_array()) rd.fail(p, "expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string ip = p + "[" + std::to_string(i) + "]";
        const Json& o = arr[i];
        rd.object(o, ip, {"start", "end", "z_min", "z_max", "sections", "seed"});
        for (const char* k : {"start", "end", "sections", "seed"}) {
          if (!o.contains(k)) rd.fail(ip + "." + k, "missing");
        }
        FeatureWall fw;
        fw.start = rd.vec2(o.at("start"), ip + ".start");
        fw.end = rd.vec2(o.at("end"), ip + ".end");
        rd.opt(o, "z_min", ip, [&](const Json& j, const std::string& pp) { fw.z_min = rd.number(j, pp); });
        rd.opt(o, "z_max", ip, [&](const Json& j, const std::string& pp) { fw.z_max = rd.number(j, pp); });
        fw.seed = rd.seed(o.at("seed"), ip + ".seed");
        const Json& secs = o.at("sections");
        if (!secs.is_array() || secs.empty()) rd.fail(ip + ".sections", "expected a nonempty array");
        for (std::size_t s = 0; s < secs.size(); ++s) {
          const std::string sp = ip + ".sections[" + std::to_string(s) + "]";
          rd.object(secs[s], sp, {"length", "density"});
          if (!secs[s].contains("length") || !secs[s].contains("density")) rd.fail(sp, "needs length and density");
          WallSection ws{rd.number(secs[s].at("length"), sp + ".length"), rd.number(secs[s].at("density"), sp + ".density")};
          if (!(ws.length > 0.0 && ws.density >= 0.0)) rd.fail(sp, "length must be positive, density nonnegative");
          fw.sections.push_back(ws);
        }
        if (!(fw.length() > 0.0)) rd.fail(ip, "wall has zero length");
        sc.world.walls.push_back(fw);
      }
    });
    rd.opt(w, "bounds", wp, [&](const Json& b, const std::string& p) {
      rd.object(b, p, {"min", "max"});
      if (!b.contains("min") || !b.contains("max")) rd.fail(p, "needs min and max");
      sc.world.bounds.min = rd.vec2(b.at("min"), p + ".min");
      sc.world.bounds.max = rd.vec2(b.at("max"), p + ".max");
    });
  });

  // landmarks
  {
    const Json& l = doc.at("landmarks");
    rd.object(l, "landmarks", {"distribution", "count", "lower", "upper", "weight", "seed"});
    if (!l.contains("distribution")) rd.fail("landmarks.distribution", "missing");
    sc.landmarks.distribution = rd.string(l.at("distribution"), "landmarks.distribution");
    rd.opt(l, "weight", "landmarks", [&](const Json& j, const std::string& p) {
      sc.landmarks.weight = rd.number(j, p);
      if (!(sc.landmarks.weight >= 0.0)) rd.fail(p, "must be nonnegative");
    });
    sc.landmarks.box.weight = sc.landmarks.weight;
    if (sc.landmarks.distribution == "uniform_box") {
      for (const char* k : {"count", "lower", "upper", "seed"}) {
        if (!l.contains(k)) rd.fail(std::string("landmarks.") + k, "missing");
      }
      const auto count = rd.integer(l.at("count"), "landmarks.count");
      if (count < 0) rd.fail("landmarks.count", "must be nonnegative");
      sc.landmarks.box.count = static_cast<int>(count);
      sc.landmarks.box.lo = rd.vec3(l.at("lower"), "landmarks.lower");
      sc.landmarks.box.hi = rd.vec3(l.at("upper"), "landmarks.upper");
      sc.landmarks.box.seed = rd.seed(l.at("seed"), "landmarks.seed");
    } else if (sc.landmarks.distribution == "walls") {
      for (const char* k : {"count", "lower", "upper", "seed"}) {
        if (l.contains(k)) rd.fail(std::string("landmarks.") + k, "not used by the walls distribution");
      }
    } else {
      rd.fail("landmarks.distribution", "expected \"uniform_box\" or \"walls\"");
    }
  }

  // filter
  {
    const Json& f = doc.at("filter");
    rd.object(f, "filter", {"R_q", "k_lambda", "k_mu", "W", "alphas", "collision", "robot_radius", "camera_rate",
                            "n_max", "seed"});
    for (const char* k : {"R_q", "W"}) {
      if (!f.contains(k)) rd.fail(std::string("filter.") + k, "missing");
    }
    const Json& rq = f.at("R_q");
    if (rq.is_array() && !rq.empty() && rq[0].is_array()) {
      sc.filter.R_q = Mat(3, 3);
      if (rq.size() != 3) rd.fail("filter.R_q", "expected a 3x3 matrix or 3 diagonal entries");
      for (std::size_t i = 0; i < 3; ++i) {
        sc.filter.R_q.row(static_cast<Eigen::Index>(i)) = rd.vector(rq[i], "filter.R_q[" + std::to_string(i) + "]", 3).transpose();
      }
    } else {
      sc.filter.R_q = rd.vector(rq, "filter.R_q", 3).asDiagonal();
    }
    auto num = [&](const char* key, double& out) {
      rd.opt(f, key, "filter", [&](const Json& j, const std::string& p) { out = rd.number(j, p); });
    };
    num("k_lambda", sc.filter.k_lambda);
    num("k_mu", sc.filter.k_mu);
    num("robot_radius", sc.filter.params.robot_radius);
    num("camera_rate", sc.filter.camera_rate);
    sc.filter.params.W = rd.number(f.at("W"), "filter.W");
    rd.opt(f, "alphas", "filter", [&](const Json& j, const std::string& p) {
      const Vec a = rd.vector(j, p, kNumFamilies);
      for (int i = 0; i < kNumFamilies; ++i) sc.filter.params.alphas[static_cast<std::size_t>(i)] = a(i);
    });
    rd.opt(f, "collision", "filter", [&](const Json& j, const std::string& p) {
      sc.filter.params.collision_enabled = rd.boolean(j, p);
    });
    rd.opt(f, "n_max", "filter", [&](const Json& j, const std::string& p) {
      const auto n = rd.integer(j, p);
      if (n < 1) rd.fail(p, "must be at least 1");
      sc.filter.n_max = static_cast<std::size_t>(n);
    });
    rd.opt(f, "seed", "filter", [&](const Json& j, const std::string& p) { sc.filter.seed = rd.seed(j, p); });
    try {
      sc.filter.validate(3);
    } catch (const std::exception& e) {
      rd.fail("filter", e.what());
    }
  }

  // reference
  {
    const Json& r = doc.at("reference");
    if (!r.is_object() || !r.contains("type")) rd.fail("reference.type", "missing");
    const std::string type = rd.string(r.at("type"), "reference.type");
    ReferenceSpec& ref = sc.reference;
    auto num = [&](const char* key, double& out) {
      rd.opt(r, key, "reference", [&](const Json& j, const std::string& p) { out = rd.number(j, p); });
    };
    if (type == "circular_tracker") {
      rd.object(r, "reference", {"type", "center", "radius", "omega", "gain"});
      ref.kind = ReferenceKind::kCircular;
      rd.opt(r, "center", "reference", [&](const Json& j, const std::string& p) { ref.center = rd.vec2(j, p); });
      num("radius", ref.radius);
      num("omega", ref.omega);
      num("gain", ref.gain);
      if (sc.robot.model != "planar_cam_bot") rd.fail("reference.type", "circular_tracker needs planar_cam_bot");
    } else if (type == "wall_inspection") {
      rd.object(r, "reference", {"type", "v_r", "k_heading", "k_servo", "wall"});
      ref.kind = ReferenceKind::kWallInspection;
      num("v_r", ref.v_r);
      num("k_heading", ref.k_heading);
      num("k_servo", ref.k_servo);
      rd.opt(r, "wall", "reference", [&](const Json& j, const std::string& p) { ref.wall = static_cast<int>(rd.integer(j, p)); });
      if (!(ref.v_r > 0.0)) rd.fail("reference.v_r", "must be positive");
      if (sc.robot.model != "diff_drive_gimbal") rd.fail("reference.type", "wall_inspection needs diff_drive_gimbal");
      if (ref.wall < 0 || static_cast<std::size_t>(ref.wall) >= sc.world.walls.size()) {
        rd.fail("reference.wall", "no such wall in world.walls");
      }
    } else if (type == "external") {
      rd.object(r, "reference", {"type", "commands"});
      ref.kind = ReferenceKind::kExternal;
      rd.opt(r, "commands", "reference", [&](const Json& arr, const std::string& p) {
        if (!arr.is_array()) rd.fail(p, "expected an array");
        std::int64_t last = -1;
        for (std::size_t i = 0; i < arr.size(); ++i) {
          const std::string ip = p + "[" + std::to_string(i) + "]";
          rd.object(arr[i], ip, {"tick", "v"});
          if (!arr[i].contains("tick") || !arr[i].contains("v")) rd.fail(ip, "needs tick and v");
          const auto tick = rd.integer(arr[i].at("tick"), ip + ".tick");
          if (tick <= last) rd.fail(ip + ".tick", "ticks must be strictly increasing");
          last = tick;
          ref.commands.emplace_back(tick, rd.vector(arr[i].at("v"), ip + ".v", 3));
        }
      });
    } else if (type == "piecewise_constant") {
      rd.object(r, "reference", {"type", "period", "values"});
      ref.kind = ReferenceKind::kPiecewise;
      num("period", ref.period);
      if (!(ref.period > 0.0)) rd.fail("reference.period", "must be positive");
      rd.opt(r, "values", "reference", [&](const Json& arr, const std::string& p) {
        if (!arr.is_array()) rd.fail(p, "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) ref.values.push_back(rd.vector(arr[i], p + "[" + std::to_string(i) + "]", 3));
      });
    } else {
      rd.fail("reference.type", "expected circular_tracker, wall_inspection, external or piecewise_constant");
    }
  }
  return sc;
}

/// Scenario document with every default written out.
inline Json scenario_to_json(const Scenario& sc) {
  using detail::to_json;
  Json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["name"] = sc.name;
  doc["mode"] = sc.mode == RunMode::kFiltered ? "filtered" : "baseline";
  doc["duration"] = sc.duration;
  doc["dt"] = sc.filter.dt;

  Json robot;
  robot["model"] = sc.robot.model;
  robot["q0"] = to_json(sc.robot.q0);
  robot["input_lower"] = to_json(sc.robot.input_lower);
  robot["input_upper"] = to_json(sc.robot.input_upper);
  const SensorMount mount = sc.robot.mount.value_or(sc.robot.model == "diff_drive_gimbal" ? SensorMount::kOptical
                                                                                           : SensorMount::kForwardX);
  robot["sensor_mount"] = detail::mount_name(mount);
  doc["robot"] = robot;

  Json vis;
  vis["model"] = sc.visibility.model;
  if (sc.visibility.model == "sector_fov_2d") {
    vis["psi"] = sc.visibility.psi;
    vis["range"] = sc.visibility.range;
  } else {
    const CameraIntrinsics& k = sc.visibility.intrinsics;
    vis["fx"] = k.fx;
    vis["fy"] = k.fy;
    vis["cx"] = k.cx;
    vis["cy"] = k.cy;
    vis["width"] = k.width;
    vis["height"] = k.height;
    vis["r_min"] = sc.visibility.r_min;
    vis["r_max"] = sc.visibility.r_max;
  }
  doc["visibility"] = vis;

  Json world;
  world["discs"] = Json::array();
  for (const Disc& d : sc.world.discs) world["discs"].push_back({{"center", to_json(d.center)}, {"radius", d.radius}});
  world["segments"] = Json::array();
  for (const Segment& s : sc.world.segments) {
    world["segments"].push_back({{"a", to_json(s.a)}, {"b", to_json(s.b)}, {"thickness", s.thickness}});
  }
  world["walls"] = Json::array();
  for (const FeatureWall& w : sc.world.walls) {
    Json secs = Json::array();
    for (const WallSection& s : w.sections) secs.push_back({{"length", s.length}, {"density", s.density}});
    world["walls"].push_back({{"start", to_json(w.start)},
                              {"end", to_json(w.end)},
                              {"z_min", w.z_min},
                              {"z_max", w.z_max},
                              {"sections", secs},
                              {"seed", w.seed}});
  }
  world["bounds"] = {{"min", to_json(sc.world.bounds.min)}, {"max", to_json(sc.world.bounds.max)}};
  doc["world"] = world;

  Json lm;
  lm["distribution"] = sc.landmarks.distribution;
  if (sc.landmarks.distribution == "uniform_box") {
    lm["count"] = sc.landmarks.box.count;
    lm["lower"] = to_json(sc.landmarks.box.lo);
    lm["upper"] = to_json(sc.landmarks.box.hi);
    lm["weight"] = sc.landmarks.box.weight;
    lm["seed"] = sc.landmarks.box.seed;
  } else {
    lm["weight"] = sc.landmarks.weight;
  }
  doc["landmarks"] = lm;

  Json f;
  Json rq = Json::array();
  for (Eigen::Index i = 0; i < sc.filter.R_q.rows(); ++i) rq.push_back(to_json(sc.filter.R_q.row(i).transpose()));
  f["R_q"] = rq;
  f["k_lambda"] = sc.filter.k_lambda;
  f["k_mu"] = sc.filter.k_mu;
  f["W"] = sc.filter.params.W;
  f["alphas"] = sc.filter.params.alphas;
  f["collision"] = sc.filter.params.collision_enabled;
  f["robot_radius"] = sc.filter.params.robot_radius;
  f["camera_rate"] = sc.filter.camera_rate;
  f["n_max"] = sc.filter.n_max;
  f["seed"] = sc.filter.seed;
  doc["filter"] = f;

  const ReferenceSpec& r = sc.reference;
  Json ref;
  ref["type"] = detail::reference_name(r.kind);
  switch (r.kind) {
    case ReferenceKind::kCircular:
      ref["center"] = to_json(r.center);
      ref["radius"] = r.radius;
      ref["omega"] = r.omega;
      ref["gain"] = r.gain;
      break;
    case ReferenceKind::kWallInspection:
      ref["v_r"] = r.v_r;
      ref["k_heading"] = r.k_heading;
      ref["k_servo"] = r.k_servo;
      ref["wall"] = r.wall;
      break;
    case ReferenceKind::kExternal:
      ref["commands"] = Json::array();
      for (const auto& [tick, v] : r.commands) ref["commands"].push_back({{"tick", tick}, {"v", to_json(v)}});
      break;
    case ReferenceKind::kPiecewise:
      ref["period"] = r.period;
      ref["values"] = Json::array();
      for (const Vec& v : r.values) ref["values"].push_back(to_json(v));
      break;
  }
  doc["reference"] = ref;
  return doc;
}

/// Replaces every seed in the scenario (fuzzing hook).
inline void override_seeds(Scenario& sc, std::uint64_t seed) {
  sc.landmarks.box.seed = seed;
  sc.filter.seed = seed;
  for (FeatureWall& w : sc.world.walls) w.seed = seed;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ScenarioError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Loads a scenario file, applying dotted overrides before validation.
inline Scenario load_scenario(const std::string& path, const std::vector<std::string>& overrides = {}) {
  const std::string text = read_file(path);
  Json doc = parse_json_text(text);
  for (const std::string& o : overrides) apply_override(doc, o);
  return scenario_from_json(doc, text);
}

// ---------------------------------------------------------------------------
// trace.csv

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::runtime_error("bad number '" + s + "'");
  return x;
}

inline std::vector<std::string> trace_columns(int n, int m) {
  std::vector<std::string> cols{"t"};
  for (int i = 0; i < n; ++i) cols.push_back("q" + std::to_string(i));
  for (const char* c : {"w", "w_hat", "h1_min", "h2_min", "h3_min", "h4_min", "h5_min", "h6"}) cols.emplace_back(c);
  for (int i = 0; i < m; ++i) cols.push_back("v_ref" + std::to_string(i));
  for (int i = 0; i < m; ++i) cols.push_back("v_star" + std::to_string(i));
  for (const char* c : {"deviation", "event", "iters", "visible", "n_active"}) cols.emplace_back(c);
  return cols;
}

inline void write_trace_csv(std::ostream& out, const Trace& trace) {
  const auto cols = trace_columns(trace.config_dim, trace.input_dim);
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const TraceRecord& r : trace.records) {
    std::string line = format_double(r.t);
    auto add = [&](double x) {
      line += ',';
      line += format_double(x);
    };
    for (Eigen::Index i = 0; i < r.q.size(); ++i) add(r.q(i));
    add(r.w);
    add(r.w_hat);
    for (double h : r.h_min) add(h);
    for (Eigen::Index i = 0; i < r.v_ref.size(); ++i) add(r.v_ref(i));
    for (Eigen::Index i = 0; i < r.v_star.size(); ++i) add(r.v_star(i));
    add(r.deviation);
    line += ',' + std::to_string(r.event ? 1 : 0) + ',' + std::to_string(r.iters) + ',' + std::to_string(r.visible) +
            ',' + std::to_string(r.n_active);
    out << line << '\n';
  }
}

/// Columns of a trace.csv needed to recompute the metrics.
struct CsvTrace {
  std::vector<double> t, w, w_hat, deviation;
  std::vector<std::array<double, kNumFamilies>> h;
  std::vector<int> event, visible, n_active;
};

inline CsvTrace read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("trace.csv: empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) header.push_back(c);
  }
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("trace.csv: missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t it = col("t"), iw = col("w"), iwh = col("w_hat"), idev = col("deviation"), iev = col("event"),
                    ivis = col("visible"), iact = col("n_active");
  std::array<std::size_t, kNumFamilies> ih{col("h1_min"), col("h2_min"), col("h3_min"),
                                          col("h4_min"), col("h5_min"), col("h6")};
  CsvTrace out;
  std::vector<std::string> cells;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    cells.clear();
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (cells.size() != header.size()) throw std::runtime_error("trace.csv: ragged row");
    out.t.push_back(parse_double(cells[it]));
    out.w.push_back(parse_double(cells[iw]));
    out.w_hat.push_back(parse_double(cells[iwh]));
    out.deviation.push_back(parse_double(cells[idev]));
    std::array<double, kNumFamilies> h;
    for (int f = 0; f < kNumFamilies; ++f) h[static_cast<std::size_t>(f)] = parse_double(cells[ih[static_cast<std::size_t>(f)]]);
    out.h.push_back(h);
    out.event.push_back(std::stoi(cells[iev]));
    out.visible.push_back(std::stoi(cells[ivis]));
    out.n_active.push_back(std::stoi(cells[iact]));
  }
  return out;
}

inline Metrics metrics(const CsvTrace& t) {
  return metrics(t.t, t.w, t.w_hat, t.h, t.deviation, t.event, t.visible, t.n_active);
}

inline Json metrics_to_json(const Metrics& m) {
  auto num = [](double x) -> Json { return std::isfinite(x) ? Json(x) : Json(nullptr); };
  Json j;
  j["ticks"] = m.ticks;
  j["events"] = m.events;
  j["min_w"] = num(m.min_w);
  j["mean_w"] = num(m.mean_w);
  j["min_w_hat"] = num(m.min_w_hat);
  j["mean_w_hat"] = num(m.mean_w_hat);
  Json h;
  for (int f = 0; f < kNumFamilies; ++f) h["h" + std::to_string(f + 1)] = num(m.h_min[static_cast<std::size_t>(f)]);
  j["h_min"] = h;
  j["total_deviation"] = num(m.total_deviation);
  j["breaches"] = m.breaches;
  j["min_visible"] = m.min_visible;
  j["min_active"] = m.min_active;
  return j;
}

}  // namespace visifilter
