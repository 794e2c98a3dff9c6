#include "gateway.hpp"

#include "scenarios.hpp"

#include <httplib.h>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <list>
#include <mutex>
#include <optional>
#include <thread>

namespace vlimb {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

// Blocking FIFO. With a capacity, pushing onto a full queue drops the oldest
// entry (state streams want the newest frame, not every frame).
template <class T>
class Queue {
 public:
  explicit Queue(std::size_t capacity = 0) : capacity_(capacity) {}

  bool push(T v) {
    {
      std::lock_guard lk(m_);
      if (closed_) return false;
      if (capacity_ && q_.size() >= capacity_) q_.pop_front();
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
    return true;
  }

  std::optional<T> pop(std::chrono::milliseconds timeout) {
    std::unique_lock lk(m_);
    cv_.wait_for(lk, timeout, [&] { return closed_ || !q_.empty(); });
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

  std::optional<T> try_pop() { return pop(std::chrono::milliseconds(0)); }

  void close() {
    {
      std::lock_guard lk(m_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lk(m_);
    return closed_;
  }

 private:
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::deque<T> q_;
  std::size_t capacity_;
  bool closed_ = false;
};

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

// ---------------------------------------------------------------------------
// Commands

struct Command {
  std::string type;
  json id;  // echoed in the reply when present
  json body;
};

const std::vector<std::string>& command_types() {
  static const std::vector<std::string> types = {"set_target", "switch_mode", "set_payload", "grasp",
                                                 "release",    "load_scenario", "pause",     "resume",
                                                 "reset",      "get_model",   "shutdown"};
  return types;
}

double finite_number(const json& m, const char* key) {
  const auto it = m.find(key);
  if (it == m.end() || !it->is_number()) throw std::invalid_argument(std::string("'") + key + "' must be a number");
  const double v = it->get<double>();
  if (!std::isfinite(v)) throw std::invalid_argument(std::string("'") + key + "' must be finite");
  return v;
}

Eigen::VectorXd number_array(const json& m, const char* key, int size) {
  const auto it = m.find(key);
  if (it == m.end() || !it->is_array() || it->size() != static_cast<std::size_t>(size))
    throw std::invalid_argument(std::string("'") + key + "' must be an array of " + std::to_string(size) + " numbers");
  Eigen::VectorXd v(size);
  for (int i = 0; i < size; ++i) {
    const auto& x = (*it)[static_cast<std::size_t>(i)];
    if (!x.is_number() || !std::isfinite(x.get<double>()))
      throw std::invalid_argument(std::string("'") + key + "' must hold finite numbers");
    v[i] = x.get<double>();
  }
  return v;
}

std::string text(const json& m, const char* key) {
  const auto it = m.find(key);
  if (it == m.end() || !it->is_string() || it->get<std::string>().empty())
    throw std::invalid_argument(std::string("'") + key + "' must be a non-empty string");
  return it->get<std::string>();
}

// Shape checks only; limits and state guards are the loop's business.
Command parse_command(const json& m) {
  if (!m.is_object()) throw std::invalid_argument("message must be an object");
  Command c;
  c.type = text(m, "type");
  if (std::find(command_types().begin(), command_types().end(), c.type) == command_types().end())
    throw std::invalid_argument("unknown command type '" + c.type + "'");
  if (m.contains("id")) {
    if (!m["id"].is_string() && !m["id"].is_number_integer()) throw std::invalid_argument("'id' must be a string or integer");
    c.id = m["id"];
  }
  c.body = m;
  if (c.type == "set_target") {
    number_array(m, "q_des", kDof);
    if (m.contains("duration_s") && finite_number(m, "duration_s") <= 0.0)
      throw std::invalid_argument("'duration_s' must be > 0");
  } else if (c.type == "switch_mode" || c.type == "load_scenario") {
    text(m, "name");
  } else if (c.type == "set_payload") {
    if (finite_number(m, "kg") < 0.0) throw std::invalid_argument("'kg' must be >= 0");
  } else if (c.type == "grasp" && m.contains("anchor")) {
    number_array(m, "anchor", 3);
  }
  return c;
}

json reply(const Command& c, const char* type) {
  json r = {{"type", type}, {"command", c.type}};
  if (!c.id.is_null()) r["id"] = c.id;
  return r;
}

json error_reply(const std::string& reason) { return {{"type", "error"}, {"reason", "malformed: " + reason}}; }

struct Envelope {
  Command command;
  std::promise<json> reply;
};

// ---------------------------------------------------------------------------
// Schema

json type_const(const std::string& t) { return {{"const", t}}; }

json number_array_schema(int n, const std::string& unit) {
  return {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", n}, {"maxItems", n}, {"x-unit", unit}};
}

json object_schema(const std::string& type, json properties, std::vector<std::string> required) {
  properties["type"] = type_const(type);
  properties["id"] = {{"type", {"string", "integer"}}, {"description", "echoed in the reply"}};
  required.insert(required.begin(), "type");
  return {{"type", "object"}, {"properties", properties}, {"required", required}};
}

}  // namespace

json gateway_schema() {
  const json vec5 = number_array_schema(kDof, "rad");
  json commands = json::array();
  commands.push_back(object_schema(
      "set_target", {{"q_des", vec5}, {"duration_s", {{"type", "number"}, {"exclusiveMinimum", 0}, {"x-unit", "s"}}}},
      {"q_des"}));
  commands.push_back(object_schema("switch_mode", {{"name", {{"type", "string"}}}}, {"name"}));
  commands.push_back(object_schema("set_payload", {{"kg", {{"type", "number"}, {"minimum", 0}, {"x-unit", "kg"}}}}, {"kg"}));
  commands.push_back(object_schema("grasp", {{"anchor", number_array_schema(3, "m")}}, {}));
  commands.push_back(object_schema("load_scenario", {{"name", {{"enum", {"home", "reachability", "manipulation", "lift"}}}}},
                                   {"name"}));
  for (const char* t : {"release", "pause", "resume", "reset", "get_model", "shutdown"})
    commands.push_back(object_schema(t, json::object(), {}));

  const json flags = {
      {"type", "object"},
      {"properties",
       {{"saturation", {{"type", "boolean"}}},
        {"wrap", {{"type", "boolean"}}},
        {"rank_deficient", {{"type", "boolean"}}},
        {"stall", {{"type", "boolean"}}},
        {"hard_stop", {{"type", "boolean"}}},
        {"paused", {{"type", "boolean"}}},
        {"grasped", {{"type", "boolean"}}},
        {"halted", {{"type", "boolean"}}}}}};
  const auto unit_vec = [](const char* unit) {
    return json{{"type", "array"}, {"items", {{"type", "number"}}}, {"x-unit", unit}};
  };
  json props = json::object();
  props["schema_version"] = {{"const", kGatewaySchemaVersion}};
  props["seq"] = {{"type", "integer"}};
  props["t"] = {{"type", "number"}, {"x-unit", "s"}};
  props["mode"] = {{"type", "string"}};
  props["q"] = vec5;
  props["qd"] = number_array_schema(kDof, "rad/s");
  props["q_ref"] = vec5;
  props["tau_cmd"] = number_array_schema(kDof, "N*m");
  props["tensions"] = unit_vec("N");
  props["currents"] = unit_vec("A");
  props["ee"] = {{"type", "object"},
                 {"properties",
                  {{"position", number_array_schema(3, "m")}, {"rotation", number_array_schema(9, "row-major 3x3")}}}};
  props["payload_kg"] = {{"type", "number"}};
  props["lift_height_m"] = {{"type", "number"}};
  props["flags"] = flags;
  props["diagnostic"] = {{"type", "string"}};
  const json state =
      object_schema("state", props, {"seq", "t", "mode", "q", "q_ref", "tensions", "currents", "ee", "flags"});

  json replies = json::array();
  replies.push_back(object_schema("ack", {{"command", {{"type", "string"}}}, {"model", {{"type", "object"}}}}, {"command"}));
  replies.push_back(object_schema("nack", {{"command", {{"type", "string"}}}, {"reason", {{"type", "string"}}}},
                                  {"command", "reason"}));
  replies.push_back(object_schema("error", {{"reason", {{"type", "string"}}}}, {"reason"}));
  replies.push_back(object_schema("hello", {{"schema_version", {{"const", kGatewaySchemaVersion}}}, {"model", {{"type", "object"}}}},
                                  {"schema_version", "model"}));
  replies.push_back(state);

  return {{"$schema", "https://json-schema.org/draft/2020-12/schema"},
          {"$id", "vlimb-gateway"},
          {"title", "vlimb gateway messages"},
          {"x-schema-version", kGatewaySchemaVersion},
          {"x-framing", "one JSON object per line (\\n) over TCP; HTTP: POST /api/command, GET /api/stream (NDJSON)"},
          {"$defs", {{"command", {{"oneOf", commands}}}, {"server_message", {{"oneOf", replies}}}}}};
}

json model_info(const RobotModel& model, const GatewayOptions& options) {
  json joints = json::array();
  for (const auto& j : model.joints)
    joints.push_back({{"name", j.name},
                      {"axis", {j.axis.x(), j.axis.y(), j.axis.z()}},
                      {"limit_lo", j.limit_lo},
                      {"limit_hi", j.limit_hi},
                      {"unit", "rad"}});
  json elements = json::array();
  for (const auto& e : model.elements)
    elements.push_back({{"name", e.name},
                        {"kind", e.kind == ElementKind::Wire ? "wire" : "belt"},
                        {"max_current_A", e.motor.max_current}});
  json modes = json::array();
  for (const auto& [name, groups] : model.modes) modes.push_back(name);
  return {{"type", "model_info"},
          {"schema_version", kGatewaySchemaVersion},
          {"name", model.name},
          {"joints", joints},
          {"elements", elements},
          {"modes", modes},
          {"default_mode", model.default_mode},
          {"tension_floor_N", model.controller.tension_floor},
          {"tension_cap_N", model.controller.tension_cap},
          {"stream_rate_hz", options.stream_rate},
          {"time_scale", options.time_scale},
          {"dt_s", options.params.dt}};
}

// ---------------------------------------------------------------------------

struct Connection {
  int fd = -1;
  Queue<std::string> out{1024};
  std::thread reader;
  std::thread writer;
  std::atomic<bool> alive{true};
};

struct Gateway::Impl {
  RobotModel model;
  GatewayOptions options;
  ControlGains gains;

  // Loop-owned.
  SimState state;
  SimState initial;
  Trajectory trajectory;
  ControlOutput out;
  double payload_kg = 0.0;
  bool paused = false;
  long step_count = 0;
  long seq = 0;

  Queue<Envelope> commands;
  Queue<std::shared_ptr<const json>> frames{1};

  mutable std::mutex latest_mutex;
  std::shared_ptr<const json> latest;

  std::mutex subscribers_mutex;
  std::list<std::shared_ptr<Connection>> connections;
  std::list<std::shared_ptr<Queue<std::string>>> http_streams;

  std::atomic<bool> stopping{false};
  std::mutex done_mutex;
  std::condition_variable done_cv;
  bool done = false;
  bool started = false;

  int listen_fd = -1;
  int bound_port = -1;
  int bound_http_port = -1;
  httplib::Server http;
  std::thread loop_thread, broadcast_thread, accept_thread, http_thread;

  Impl(RobotModel m, GatewayOptions o) : model(std::move(m)), options(std::move(o)), gains(gains_from(model)) {
    if (options.data_dir.empty()) options.data_dir = default_data_dir();
    load(options.scenario.empty() ? "home" : options.scenario);
  }

  // -- loop side ------------------------------------------------------------

  Trajectory hold_at(const JointVector& q) const {
    JointVector c = q;
    for (int j = 0; j < kDof; ++j)
      c[j] = std::clamp(c[j], model.joints[static_cast<std::size_t>(j)].limit_lo,
                        model.joints[static_cast<std::size_t>(j)].limit_hi);
    return plan_trajectory(model, c, c, 0.5, state.t);
  }

  json scenario_json(const std::string& name) const {
    const auto path = std::filesystem::path(options.data_dir) / "scenarios" / (name + ".json");
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario file '" + path.string() + "'");
    return json::parse(in);
  }

  void load(const std::string& name) {
    JointVector q = (JointVector() << 0.0, 0.3, 0.5, 0.8, 0.0).finished();
    std::string mode = model.default_mode;
    double payload = 0.0;
    bool lift = false;
    if (name == "lift") {
      const auto cfg = scenario_json(name);
      for (int j = 0; j < kDof; ++j) q[j] = cfg.at("posture").at(static_cast<std::size_t>(j)).get<double>();
      mode = cfg.at("mode").get<std::string>();
      payload = cfg.at("payload_kg").get<double>();
      lift = true;
    } else if (name == "manipulation" || name == "reachability") {
      const auto cfg = scenario_json(name);
      for (int j = 0; j < kDof; ++j) q[j] = cfg.at("home").at(static_cast<std::size_t>(j)).get<double>();
      mode = cfg.at("mode").get<std::string>();
      payload = cfg.value("payload_kg", 0.0);
    } else if (name != "home") {
      throw std::invalid_argument("unknown scenario '" + name + "' (expected home, reachability, manipulation or lift)");
    }
    const auto routing = resolve_routing(model, mode);
    Eigen::VectorXd f;
    if (!lift)
      f = allocate_tensions(muscle_jacobian(model, routing, q), gravity_torque(model, q, options.params.gravity),
                            element_kinds(model), gains)
              .tensions;
    SimState s = make_state(model, mode, q, f);
    if (lift) {
      s.carriage.enabled = true;
      s.carriage.mass = payload;
      s = apply_grasp(model, s, hand_position(model, s), options.params);
    }
    initial = s;
    payload_kg = payload;
    reset();
  }

  void reset() {
    state = initial;
    trajectory = hold_at(state.joints.q);
    out = ControlOutput{};
    out.q_ref = state.joints.q;
    out.currents_cmd = tension_to_current(state.wire.tensions, model).currents;
    paused = false;
    step_count = 0;
  }

  void advance() {
    if (state.halted) return;
    if (paused) {
      state = idle_step(model, state, options.params);
      return;
    }
    const int divider = std::max(1, static_cast<int>(std::lround(1.0 / (gains.loop_rate * options.params.dt))));
    if (step_count % divider == 0) {
      ControlSnapshot snap{state.joints, state.wire, state.rings, state.payload_mass};
      out = control_step(model, state.routing, snap, trajectory, state.t, gains);
    }
    state = step(model, state, out.currents_cmd, options.params);
    ++step_count;
  }

  json execute(const Command& c) {
    try {
      const json& m = c.body;
      json ack = reply(c, "ack");
      if (c.type == "set_target") {
        if (state.halted) throw std::runtime_error("halted: " + state.diagnostic);
        if (paused) throw std::runtime_error("paused");
        const Eigen::VectorXd v = number_array(m, "q_des", kDof);
        const JointVector q_des = v;
        const JointVector from = trajectory.position(state.t);
        const double T = m.contains("duration_s") ? m["duration_s"].get<double>() : spline_duration(model, from, q_des);
        trajectory = plan_trajectory(model, from, q_des, T, state.t);
        ack["duration_s"] = T;
      } else if (c.type == "switch_mode") {
        if (!paused && !trajectory.finished(state.t)) throw PlantError("not stationary");
        state = set_mode(model, state, text(m, "name"));
        trajectory = hold_at(state.joints.q);
      } else if (c.type == "set_payload") {
        payload_kg = m["kg"].get<double>();
        if (state.gripper_closed && !state.grasp_anchor) state.payload_mass = payload_kg;
        if (state.carriage.enabled) state.carriage.mass = payload_kg;
      } else if (c.type == "grasp") {
        if (m.contains("anchor")) {
          state = apply_grasp(model, state, Vec3(number_array(m, "anchor", 3)), options.params);
        } else {
          state.gripper_closed = true;
          state.payload_mass = payload_kg;
        }
      } else if (c.type == "release") {
        state = release_grasp(state);
        state.payload_mass = 0.0;
      } else if (c.type == "load_scenario") {
        load(text(m, "name"));
      } else if (c.type == "pause") {
        paused = true;
      } else if (c.type == "resume") {
        if (paused) {
          paused = false;
          trajectory = hold_at(state.joints.q);
        }
      } else if (c.type == "reset") {
        reset();
      } else if (c.type == "get_model") {
        ack["model"] = model_info(model, options);
      } else if (c.type == "shutdown") {
        {
          std::lock_guard lk(done_mutex);
          done = true;
        }
        done_cv.notify_all();
      }
      ack["t"] = state.t;
      return ack;
    } catch (const std::exception& e) {
      json nack = reply(c, "nack");
      nack["reason"] = e.what();
      return nack;
    }
  }

  json snapshot() {
    const auto frames_now = forward_kinematics(model, state.joints.q);
    const Mat3& R = frames_now.back().rotation;
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) rot.push_back(R(r, k));
    const Vec3 p = hand_position(model, state);
    bool at_cap = false;
    for (std::size_t e = 0; e < model.elements.size(); ++e)
      if (model.elements[e].kind == ElementKind::Wire &&
          state.wire.tensions[static_cast<Eigen::Index>(e)] >= 0.999 * gains.tension_cap)
        at_cap = true;
    const bool still = state.joints.qd.cwiseAbs().maxCoeff() < 1e-3;
    json msg = {{"type", "state"},
                {"schema_version", kGatewaySchemaVersion},
                {"seq", ++seq},
                {"t", state.t},
                {"mode", state.mode},
                {"q", vec(state.joints.q)},
                {"qd", vec(state.joints.qd)},
                {"q_ref", vec(out.q_ref)},
                {"tau_cmd", vec(out.tau_cmd)},
                {"tensions", vec(state.wire.tensions)},
                {"currents", vec(state.currents)},
                {"ee", {{"position", {p.x(), p.y(), p.z()}}, {"rotation", rot}}},
                {"payload_kg", state.payload_mass},
                {"lift_height_m", state.carriage.enabled ? state.carriage.height : 0.0},
                {"flags",
                 {{"saturation", state.saturated || out.saturated},
                  {"wrap", state.wrap_violation},
                  {"rank_deficient", out.rank_deficient},
                  {"stall", at_cap && still && !paused},
                  {"hard_stop", state.hard_stop},
                  {"paused", paused},
                  {"grasped", state.gripper_closed},
                  {"halted", state.halted}}}};
    if (state.halted) msg["diagnostic"] = state.diagnostic;
    return msg;
  }

  void publish() {
    auto msg = std::make_shared<const json>(snapshot());
    {
      std::lock_guard lk(latest_mutex);
      latest = msg;
    }
    frames.push(std::move(msg));
  }

  void run_loop() {
    const double dt = options.params.dt;
    const double scale = options.time_scale > 0.0 ? options.time_scale : 1.0;
    auto last = Clock::now();
    double debt = 0.0;
    publish();
    while (!stopping) {
      bool changed = false;
      if (auto env = commands.pop(std::chrono::milliseconds(1))) {
        env->reply.set_value(execute(env->command));
        changed = true;
        while (auto more = commands.try_pop()) more->reply.set_value(execute(more->command));
      }
      const auto now = Clock::now();
      debt += std::chrono::duration<double>(now - last).count() * scale;
      last = now;
      int budget = 2000;
      while (debt >= dt && budget-- > 0) {
        advance();
        debt -= dt;
        changed = true;
      }
      if (budget <= 0) debt = 0.0;  // falling behind: drop the backlog
      if (changed) publish();
    }
    // Answer anything still queued so no reader waits forever.
    commands.close();
    while (auto env = commands.try_pop()) env->reply.set_value(error_reply("gateway stopping"));
  }

  // -- broadcaster ------------------------------------------------------------

  void run_broadcast() {
    const auto period = std::chrono::duration<double>(1.0 / std::max(1e-3, options.stream_rate));
    auto next = Clock::now();
    long sent_seq = 0;
    while (!stopping) {
      next += std::chrono::duration_cast<Clock::duration>(period);
      std::this_thread::sleep_until(next);
      std::shared_ptr<const json> frame;
      while (auto f = frames.try_pop()) frame = *f;
      if (!frame || (*frame)["seq"].get<long>() <= sent_seq) continue;
      sent_seq = (*frame)["seq"].get<long>();
      const std::string line = frame->dump() + "\n";
      std::lock_guard lk(subscribers_mutex);
      for (auto& c : connections)
        if (c->alive) c->out.push(line);
      for (auto& q : http_streams) q->push(line);
    }
  }

  // -- connections ------------------------------------------------------------

  json submit(const json& message) {
    Command c;
    try {
      c = parse_command(message);
    } catch (const std::exception& e) {
      json r = error_reply(e.what());
      if (message.is_object() && message.contains("id")) r["id"] = message["id"];
      return r;
    }
    Envelope env{c, {}};
    auto fut = env.reply.get_future();
    if (!commands.push(std::move(env))) return error_reply("gateway stopping");
    if (fut.wait_for(std::chrono::seconds(10)) != std::future_status::ready) return error_reply("timed out");
    try {
      return fut.get();
    } catch (const std::exception&) {
      return error_reply("gateway stopping");
    }
  }

  void read_connection(const std::shared_ptr<Connection>& c) {
    std::string buffer;
    char chunk[4096];
    constexpr std::size_t kMaxLine = 1 << 16;
    while (!stopping && c->alive) {
      pollfd pfd{c->fd, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, 100);
      if (ready < 0) break;
      if (ready == 0) continue;
      const ssize_t n = ::recv(c->fd, chunk, sizeof chunk, 0);
      if (n <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(n));
      std::size_t pos;
      while ((pos = buffer.find('\n')) != std::string::npos) {
        std::string line = buffer.substr(0, pos);
        buffer.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        json r;
        try {
          r = submit(json::parse(line));
        } catch (const json::parse_error& e) {
          r = error_reply(std::string("invalid JSON: ") + e.what());
        }
        c->out.push(r.dump() + "\n");
      }
      if (buffer.size() > kMaxLine) {
        buffer.clear();
        c->out.push(error_reply("line longer than 65536 bytes").dump() + "\n");
      }
    }
    c->alive = false;
    c->out.close();
  }

  static void write_connection(const std::shared_ptr<Connection>& c) {
    for (;;) {
      auto line = c->out.pop(std::chrono::milliseconds(100));
      if (!line) {
        if (c->out.closed()) break;
        continue;
      }
      std::size_t off = 0;
      while (off < line->size()) {
        const ssize_t n = ::send(c->fd, line->data() + off, line->size() - off, MSG_NOSIGNAL);
        if (n <= 0) {
          c->alive = false;
          c->out.close();
          return;
        }
        off += static_cast<std::size_t>(n);
      }
    }
  }

  void reap(bool all) {
    std::list<std::shared_ptr<Connection>> dead;
    {
      std::lock_guard lk(subscribers_mutex);
      for (auto it = connections.begin(); it != connections.end();) {
        if (all || !(*it)->alive) {
          dead.push_back(*it);
          it = connections.erase(it);
        } else {
          ++it;
        }
      }
    }
    for (auto& c : dead) {
      c->alive = false;
      ::shutdown(c->fd, SHUT_RDWR);
      c->out.close();
      if (c->reader.joinable()) c->reader.join();
      if (c->writer.joinable()) c->writer.join();
      ::close(c->fd);
    }
  }

  void run_accept() {
    while (!stopping) {
      pollfd pfd{listen_fd, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, 100);
      reap(false);
      if (ready <= 0) continue;
      const int fd = ::accept(listen_fd, nullptr, nullptr);
      if (fd < 0) continue;
      auto c = std::make_shared<Connection>();
      c->fd = fd;
      json hello = {{"type", "hello"}, {"schema_version", kGatewaySchemaVersion}, {"model", model_info(model, options)}};
      c->out.push(hello.dump() + "\n");
      c->reader = std::thread([this, c] { read_connection(c); });
      c->writer = std::thread([c] { write_connection(c); });
      std::lock_guard lk(subscribers_mutex);
      connections.push_back(c);
    }
  }

  void bind_tcp() {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(std::max(0, options.port));
    if (::getaddrinfo(options.host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
      throw std::runtime_error("gateway: cannot resolve host '" + options.host + "'");
    listen_fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const int yes = 1;
    ::setsockopt(listen_fd, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    const bool ok = listen_fd >= 0 && ::bind(listen_fd, res->ai_addr, res->ai_addrlen) == 0 && ::listen(listen_fd, 16) == 0;
    ::freeaddrinfo(res);
    if (!ok) {
      if (listen_fd >= 0) ::close(listen_fd);
      listen_fd = -1;
      throw std::runtime_error("gateway: cannot bind " + options.host + ":" + port);
    }
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
    bound_port = ntohs(addr.sin_port);
  }

  // -- HTTP -------------------------------------------------------------------

  void setup_http() {
    const auto send_json = [](httplib::Response& res, const json& j, int status = 200) {
      res.status = status;
      res.set_content(j.dump(), "application/json");
    };
    http.Get("/api/model", [this, send_json](const httplib::Request&, httplib::Response& res) {
      send_json(res, model_info(model, options));
    });
    http.Get("/api/schema", [send_json](const httplib::Request&, httplib::Response& res) {
      send_json(res, gateway_schema());
    });
    http.Get("/api/state", [this, send_json](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lk(latest_mutex);
      send_json(res, latest ? *latest : json(nullptr));
    });
    http.Post("/api/command", [this, send_json](const httplib::Request& req, httplib::Response& res) {
      json r;
      try {
        r = submit(json::parse(req.body));
      } catch (const json::parse_error& e) {
        r = error_reply(std::string("invalid JSON: ") + e.what());
      }
      const auto type = r.value("type", "");
      send_json(res, r, type == "ack" ? 200 : type == "nack" ? 409 : 400);
    });
    http.Get("/api/stream", [this](const httplib::Request&, httplib::Response& res) {
      auto q = std::make_shared<Queue<std::string>>(64);
      {
        std::lock_guard lk(subscribers_mutex);
        http_streams.push_back(q);
      }
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "application/x-ndjson",
          [this, q](std::size_t, httplib::DataSink& sink) {
            if (stopping) {
              sink.done();
              return true;
            }
            if (auto line = q->pop(std::chrono::milliseconds(200)))
              return sink.write(line->data(), line->size());
            return sink.is_writable();
          },
          [this, q](bool) {
            std::lock_guard lk(subscribers_mutex);
            http_streams.remove(q);
          });
    });
    if (!options.static_dir.empty() && !http.set_mount_point("/", options.static_dir))
      throw std::runtime_error("gateway: static directory '" + options.static_dir + "' does not exist");
  }
};

// ---------------------------------------------------------------------------

Gateway::Gateway(RobotModel model, GatewayOptions options)
    : impl_(std::make_unique<Impl>(std::move(model), std::move(options))) {}

Gateway::~Gateway() { stop(); }

void Gateway::start() {
  auto& d = *impl_;
  if (d.started) return;
  d.bind_tcp();
  if (d.options.http_port >= 0) {
    d.setup_http();
    if (d.options.http_port == 0) {
      d.bound_http_port = d.http.bind_to_any_port(d.options.host);
    } else if (d.http.bind_to_port(d.options.host, d.options.http_port)) {
      d.bound_http_port = d.options.http_port;
    }
    if (d.bound_http_port <= 0) {
      ::close(d.listen_fd);
      d.listen_fd = -1;
      throw std::runtime_error("gateway: cannot bind HTTP port " + std::to_string(d.options.http_port));
    }
    d.http_thread = std::thread([&d] { d.http.listen_after_bind(); });
    // stop() before the listener is up would leave it running forever.
    d.http.wait_until_ready();
  }
  d.started = true;
  d.loop_thread = std::thread([&d] { d.run_loop(); });
  d.broadcast_thread = std::thread([&d] { d.run_broadcast(); });
  d.accept_thread = std::thread([&d] { d.run_accept(); });
}

void Gateway::stop() {
  auto& d = *impl_;
  if (!d.started || d.stopping.exchange(true)) return;
  d.http.stop();
  for (auto* t : {&d.loop_thread, &d.broadcast_thread, &d.accept_thread, &d.http_thread})
    if (t->joinable()) t->join();
  d.reap(true);
  if (d.listen_fd >= 0) ::close(d.listen_fd);
  d.listen_fd = -1;
  {
    std::lock_guard lk(d.done_mutex);
    d.done = true;
  }
  d.done_cv.notify_all();
}

void Gateway::wait() {
  std::unique_lock lk(impl_->done_mutex);
  impl_->done_cv.wait(lk, [&] { return impl_->done; });
}

bool Gateway::wait_for(double seconds) {
  std::unique_lock lk(impl_->done_mutex);
  return impl_->done_cv.wait_for(lk, std::chrono::duration<double>(seconds), [&] { return impl_->done; });
}

int Gateway::port() const { return impl_->bound_port; }
int Gateway::http_port() const { return impl_->bound_http_port; }

json Gateway::handle(const json& message) {
  if (!impl_->started || impl_->stopping) return error_reply("gateway not running");
  return impl_->submit(message);
}

json Gateway::latest_state() const {
  std::lock_guard lk(impl_->latest_mutex);
  return impl_->latest ? *impl_->latest : json(nullptr);
}

}  // namespace vlimb
