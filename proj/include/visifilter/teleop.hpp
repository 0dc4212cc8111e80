#pragma once
// Operator-in-the-loop session: zero-order hold on the latest command,
// hold timeout, and the state frames broadcast to clients. No networking here;
// the server in teleop_server.hpp drives one of these from its sim loop.

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "visifilter/io.hpp"
#include "visifilter/sim.hpp"

namespace visifilter {

struct Command {
  Vec v_ref;
  std::int64_t client_seq = 0;
};

/// Result of decoding one client frame: a command or an error text.
struct ParsedMessage {
  std::optional<Command> command;
  std::string error;
};

/// Decodes {"type": "cmd", "v_ref": [...], "client_seq": n}.
inline ParsedMessage parse_command(std::string_view text, int input_dim) {
  ParsedMessage out;
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    out.error = "malformed JSON";
    return out;
  }
  if (!j.is_object()) {
    out.error = "expected a JSON object";
    return out;
  }
  for (const auto& [k, v] : j.items()) {
    if (k != "type" && k != "v_ref" && k != "client_seq") {
      out.error = "unknown key '" + k + "'";
      return out;
    }
  }
  if (!j.contains("type") || j["type"] != "cmd") {
    out.error = "expected type \"cmd\"";
    return out;
  }
  if (!j.contains("v_ref") || !j["v_ref"].is_array() || static_cast<int>(j["v_ref"].size()) != input_dim) {
    out.error = "v_ref must be an array of " + std::to_string(input_dim) + " numbers";
    return out;
  }
  Command c;
  c.v_ref = Vec(input_dim);
  for (int i = 0; i < input_dim; ++i) {
    const Json& e = j["v_ref"][static_cast<std::size_t>(i)];
    if (!e.is_number() || !std::isfinite(e.get<double>())) {
      out.error = "v_ref entries must be finite numbers";
      return out;
    }
    c.v_ref(i) = e.get<double>();
  }
  if (j.contains("client_seq")) {
    if (!j["client_seq"].is_number_integer()) {
      out.error = "client_seq must be an integer";
      return out;
    }
    c.client_seq = j["client_seq"].get<std::int64_t>();
  }
  out.command = std::move(c);
  return out;
}

inline std::string error_frame(const std::string& message) {
  return Json{{"type", "error"}, {"message", message}}.dump();
}

class TeleopSession {
 public:
  static constexpr double kHoldTimeout = 0.5;  // s without commands before falling back to 0

  explicit TeleopSession(Scenario sc, bool keep_trace = false)
      : keep_trace_(keep_trace), sim_(checked(std::move(sc))) {
    const auto [lo, hi] = sim_.model().input_polytope().bounding_box();
    lo_ = lo;
    hi_ = hi;
    held_ = Vec::Zero(sim_.model().input_dim());
    logged_ = held_;
    timeout_ticks_ = std::llround(kHoldTimeout / sim_.scenario().filter.dt);
  }

  const Simulator& simulator() const { return sim_; }
  bool finished() const { return sim_.finished(); }
  const Vec& held_command() const { return held_; }

  /// Latest command wins. Components are clamped to the input bounding box.
  void submit(const Command& c) {
    require_size(c.v_ref, sim_.model().input_dim(), "command");
    held_ = c.v_ref.cwiseMax(lo_).cwiseMin(hi_);
    last_seq_ = c.client_seq;
    last_arrival_ = sim_.tick();
  }

  /// Advances one tick with the held command.
  TraceRecord tick() {
    if (last_arrival_ && sim_.tick() - *last_arrival_ >= timeout_ticks_) {
      held_.setZero();
      last_arrival_.reset();
    }
    if (held_ != logged_) {
      log_.emplace_back(sim_.tick(), held_);
      logged_ = held_;
    }
    TraceRecord rec = sim_.step(held_);
    if (keep_trace_) trace_.push_back(rec);
    return rec;
  }

  /// Applied command changes as (tick, v_ref), the format of an external
  /// reference's command list.
  const std::vector<std::pair<std::int64_t, Vec>>& command_log() const { return log_; }
  const std::vector<TraceRecord>& trace() const { return trace_; }

  /// The scenario with its external reference replaced by the applied log.
  Scenario replay_scenario() const {
    Scenario sc = sim_.scenario();
    sc.reference.commands = log_;
    return sc;
  }

  Json state_message(const TraceRecord& rec) const {
    auto finite = [](double x) -> Json { return std::isfinite(x) ? Json(x) : Json(nullptr); };
    const Scenario& sc = sim_.scenario();
    Json j;
    j["type"] = "state";
    j["t"] = rec.t;
    j["tick"] = rec.tick;
    j["q"] = detail::to_json(rec.q);
    j["camera_heading"] = wrap_angle(sim_.model().camera_heading(rec.q));
    const auto visible = visible_set(sim_.visibility(), sim_.model().sensor_pose(rec.q), sim_.store());
    Json lms = Json::array();
    for (const Landmark& l : sim_.store().landmarks()) {
      Json e;
      e["id"] = l.id;
      e["p"] = detail::to_json(l.world_position);
      e["visible"] = std::find(visible.begin(), visible.end(), l.id) != visible.end();
      const auto it = std::find(rec.active_ids.begin(), rec.active_ids.end(), l.id);
      e["active"] = it != rec.active_ids.end();
      e["lambda"] = it != rec.active_ids.end() ? finite(rec.lambda(it - rec.active_ids.begin())) : Json(nullptr);
      lms.push_back(e);
    }
    j["landmarks"] = lms;
    j["w"] = rec.w;
    j["w_hat"] = finite(rec.w_hat);
    j["W"] = sc.filter.params.W;
    Json h;
    for (int f = 0; f < kNumFamilies; ++f) h["h" + std::to_string(f + 1)] = finite(rec.h_min[static_cast<std::size_t>(f)]);
    j["h_min"] = h;
    j["v_ref"] = detail::to_json(rec.v_ref);
    j["v_star"] = detail::to_json(rec.v_star);
    j["event"] = rec.event;
    j["visible"] = rec.visible;
    j["n_active"] = rec.n_active;
    j["client_seq"] = last_seq_;
    return j;
  }

 private:
  static Scenario checked(Scenario sc) {
    if (sc.reference.kind != ReferenceKind::kExternal) {
      throw ScenarioError("field 'reference.type': teleoperation needs an external reference");
    }
    sc.reference.commands.clear();
    return sc;
  }

  bool keep_trace_;
  Simulator sim_;
  Vec lo_, hi_;
  Vec held_;
  Vec logged_;
  std::int64_t timeout_ticks_ = 50;
  std::optional<std::int64_t> last_arrival_;
  std::int64_t last_seq_ = -1;
  std::vector<std::pair<std::int64_t, Vec>> log_;
  std::vector<TraceRecord> trace_;
};

}  // namespace visifilter
