#include <vlimb/vlimb.h>

#include "gateway.hpp"
#include "scenarios.hpp"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

struct vlimb_model {
  vlimb::RobotModel model;
};

struct vlimb_report {
  vlimb::ScenarioReport report;
};

struct vlimb_gateway {
  std::unique_ptr<vlimb::Gateway> gateway;
};

namespace {

thread_local std::string g_last_error;

vlimb_status fail(vlimb_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

bool starts_with(const char* s, const char* prefix) { return std::strncmp(s, prefix, std::strlen(prefix)) == 0; }

template <class F>
vlimb_status guarded(F&& f) {
  try {
    g_last_error.clear();
    return f();
  } catch (const vlimb::ValidationError& e) {
    return fail(VLIMB_E_MODEL, e.what());
  } catch (const vlimb::ParseError& e) {
    return fail(starts_with(e.what(), "cannot ") ? VLIMB_E_IO : VLIMB_E_PARSE, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(VLIMB_E_PARSE, e.what());
  } catch (const vlimb::PlantError& e) {
    return fail(VLIMB_E_REJECTED, e.what());
  } catch (const vlimb::CommandError& e) {
    return fail(VLIMB_E_REJECTED, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(VLIMB_E_INVALID_ARGUMENT, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(VLIMB_E_IO, e.what());
  } catch (const std::runtime_error& e) {
    const bool io = starts_with(e.what(), "cannot ");
    const bool net = starts_with(e.what(), "gateway: cannot");
    return fail(net ? VLIMB_E_NETWORK : io ? VLIMB_E_IO : VLIMB_E_PARSE, e.what());
  } catch (const std::exception& e) {
    return fail(VLIMB_E_INTERNAL, e.what());
  } catch (...) {
    return fail(VLIMB_E_INTERNAL, "unknown error");
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define VLIMB_REQUIRE(cond, what) \
  if (!(cond)) return fail(VLIMB_E_INVALID_ARGUMENT, what)

}  // namespace

extern "C" {

const char* vlimb_version(void) { return "1.0.0"; }

const char* vlimb_status_name(vlimb_status status) {
  switch (status) {
    case VLIMB_OK: return "ok";
    case VLIMB_E_INVALID_ARGUMENT: return "invalid argument";
    case VLIMB_E_IO: return "i/o error";
    case VLIMB_E_PARSE: return "parse error";
    case VLIMB_E_MODEL: return "invalid model";
    case VLIMB_E_REJECTED: return "rejected";
    case VLIMB_E_NETWORK: return "network error";
    case VLIMB_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* vlimb_last_error(void) { return g_last_error.c_str(); }

void vlimb_free_string(char* s) { std::free(s); }

// ---- model -------------------------------------------------------------------

vlimb_status vlimb_model_default(vlimb_model** out) {
  VLIMB_REQUIRE(out, "out is null");
  return guarded([&] {
    *out = new vlimb_model{vlimb::default_vlimb()};
    return VLIMB_OK;
  });
}

vlimb_status vlimb_model_load(const char* path, vlimb_model** out) {
  VLIMB_REQUIRE(path && out, "path or out is null");
  return guarded([&] {
    if (!std::filesystem::is_regular_file(path)) return fail(VLIMB_E_IO, std::string("no such model file '") + path + "'");
    *out = new vlimb_model{vlimb::load_model(path)};
    return VLIMB_OK;
  });
}

vlimb_status vlimb_model_validate(const vlimb_model* model) {
  VLIMB_REQUIRE(model, "model is null");
  return guarded([&] {
    vlimb::validate(model->model);
    return VLIMB_OK;
  });
}

vlimb_status vlimb_model_to_json(const vlimb_model* model, char** out) {
  VLIMB_REQUIRE(model && out, "model or out is null");
  return guarded([&] {
    *out = copy_string(vlimb::write_model(model->model));
    return VLIMB_OK;
  });
}

size_t vlimb_model_element_count(const vlimb_model* model) { return model ? model->model.elements.size() : 0; }

vlimb_status vlimb_model_element_index(const vlimb_model* model, const char* name, size_t* out) {
  VLIMB_REQUIRE(model && name && out, "model, name or out is null");
  const int i = model->model.element_index(name);
  if (i < 0) return fail(VLIMB_E_INVALID_ARGUMENT, std::string("no element named '") + name + "'");
  *out = static_cast<size_t>(i);
  return VLIMB_OK;
}

void vlimb_model_free(vlimb_model* model) { delete model; }

vlimb_status vlimb_tension_to_current(const vlimb_model* model, size_t element, double tension_N, double* current_A,
                                      double* pulley_torque_Nm, int* saturated) {
  VLIMB_REQUIRE(model, "model is null");
  VLIMB_REQUIRE(element < model->model.elements.size(), "element index out of range");
  return guarded([&] {
    const auto& m = model->model;
    Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.elements.size()));
    f[static_cast<Eigen::Index>(element)] = tension_N;
    const auto cmd = vlimb::tension_to_current(f, m);
    if (current_A) *current_A = cmd.currents[static_cast<Eigen::Index>(element)];
    if (pulley_torque_Nm) *pulley_torque_Nm = vlimb::pulley_torque(tension_N, m.elements[element].pulley_radius);
    if (saturated) *saturated = cmd.saturated[element] ? 1 : 0;
    return VLIMB_OK;
  });
}

// ---- scenarios ---------------------------------------------------------------

void vlimb_run_options_init(vlimb_run_options* o) {
  if (!o) return;
  *o = vlimb_run_options{};
  o->dt = 1e-3;
  o->log_every = 10;
}

vlimb_status vlimb_run_scenario(const vlimb_model* model, const char* name, const vlimb_run_options* options,
                                vlimb_report** out) {
  VLIMB_REQUIRE(model && name && out, "model, name or out is null");
  vlimb_run_options o;
  vlimb_run_options_init(&o);
  if (options) o = *options;
  VLIMB_REQUIRE(o.dt >= 0.0 && o.dt <= 2e-3, "dt must be in (0, 0.002] s");
  VLIMB_REQUIRE(!o.has_payload || o.payload_kg >= 0.0, "payload must be >= 0 kg");
  VLIMB_REQUIRE(!o.has_kp || o.kp >= 0.0, "kp must be >= 0");
  VLIMB_REQUIRE(o.log_every >= 0, "log_every must be >= 0");
  return guarded([&] {
    vlimb::ScenarioOptions so;
    if (o.data_dir) so.data_dir = o.data_dir;
    if (o.mode) so.mode = std::string(o.mode);
    if (o.has_payload) so.payload_kg = o.payload_kg;
    so.dt = o.dt > 0.0 ? o.dt : 1e-3;
    if (o.has_kp) so.kp = o.kp;
    so.belt_wire_contact = o.belt_wire_contact != 0;
    so.log_every = o.log_every > 0 ? o.log_every : 10;
    if (so.mode && !model->model.modes.count(*so.mode))
      return fail(VLIMB_E_INVALID_ARGUMENT, "unknown mode '" + *so.mode + "'");
    *out = new vlimb_report{vlimb::run_scenario(model->model, name, so)};
    return VLIMB_OK;
  });
}

int vlimb_report_passed(const vlimb_report* r) { return r && r->report.passed() ? 1 : 0; }

size_t vlimb_report_criterion_count(const vlimb_report* r) { return r ? r->report.criteria.size() : 0; }

vlimb_status vlimb_report_criterion(const vlimb_report* r, size_t index, const char** name, int* passed,
                                    const char** detail) {
  VLIMB_REQUIRE(r, "report is null");
  VLIMB_REQUIRE(index < r->report.criteria.size(), "criterion index out of range");
  const auto& c = r->report.criteria[index];
  if (name) *name = c.name.c_str();
  if (passed) *passed = c.passed ? 1 : 0;
  if (detail) *detail = c.detail.c_str();
  return VLIMB_OK;
}

vlimb_status vlimb_report_metric(const vlimb_report* r, const char* key, double* value) {
  VLIMB_REQUIRE(r && key && value, "report, key or value is null");
  const auto it = r->report.metrics.find(key);
  if (it == r->report.metrics.end()) return fail(VLIMB_E_INVALID_ARGUMENT, std::string("no metric '") + key + "'");
  *value = it->second;
  return VLIMB_OK;
}

vlimb_status vlimb_report_summary(const vlimb_report* r, char** out) {
  VLIMB_REQUIRE(r && out, "report or out is null");
  return guarded([&] {
    *out = copy_string(vlimb::report_summary(r->report));
    return VLIMB_OK;
  });
}

vlimb_status vlimb_report_csv(const vlimb_report* r, char** out) {
  VLIMB_REQUIRE(r && out, "report or out is null");
  return guarded([&] {
    *out = copy_string(vlimb::report_csv(r->report));
    return VLIMB_OK;
  });
}

vlimb_status vlimb_report_write(const vlimb_report* r, const char* dir) {
  VLIMB_REQUIRE(r && dir, "report or dir is null");
  return guarded([&] {
    vlimb::write_report(r->report, dir);
    return VLIMB_OK;
  });
}

void vlimb_report_free(vlimb_report* r) { delete r; }

vlimb_status vlimb_csv_describe(const char* csv_path, double tension_cap_N, char** out) {
  VLIMB_REQUIRE(csv_path && out, "path or out is null");
  return guarded([&] {
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) return fail(VLIMB_E_IO, std::string("cannot open '") + csv_path + "'");
    std::stringstream text;
    text << in.rdbuf();
    const auto r = vlimb::parse_report_csv(text.str());
    std::ostringstream s;
    s << "file: " << csv_path << "\n";
    s << "samples: " << r.series.size() << "\n";
    if (r.series.empty()) {
      *out = copy_string(s.str());
      return VLIMB_OK;
    }
    const auto& first = r.series.front();
    const auto& last = r.series.back();
    s << "time: " << first.t << " .. " << last.t << " s\n";
    for (std::size_t j = 0; j < r.joint_names.size(); ++j) {
      double worst = 0.0;
      for (const auto& x : r.series) worst = std::max(worst, std::abs(x.q_ref[static_cast<Eigen::Index>(j)] - x.q[static_cast<Eigen::Index>(j)]));
      s << "joint " << r.joint_names[j] << ": final " << last.q[static_cast<Eigen::Index>(j)] << " rad, max |q_ref - q| "
        << worst << " rad\n";
    }
    bool over = false;
    for (std::size_t e = 0; e < r.element_names.size(); ++e) {
      double peak = 0.0;
      double peak_i = 0.0;
      for (const auto& x : r.series) {
        peak = std::max(peak, x.tension[static_cast<Eigen::Index>(e)]);
        peak_i = std::max(peak_i, std::abs(x.current[static_cast<Eigen::Index>(e)]));
      }
      if (tension_cap_N > 0.0 && peak > tension_cap_N) over = true;
      s << "element " << r.element_names[e] << ": peak tension " << peak << " N, peak |current| " << peak_i << " A\n";
    }
    double top = 0.0;
    for (const auto& x : r.series) top = std::max(top, x.lift_height);
    s << "hand height: " << first.ee_height << " -> " << last.ee_height << " m\n";
    s << "lift height: final " << last.lift_height << " m, max " << top << " m\n";
    if (tension_cap_N > 0.0) s << "tension cap " << tension_cap_N << " N: " << (over ? "EXCEEDED" : "respected") << "\n";
    *out = copy_string(s.str());
    return VLIMB_OK;
  });
}

// ---- gateway -------------------------------------------------------------------

void vlimb_gateway_options_init(vlimb_gateway_options* o) {
  if (!o) return;
  const vlimb::GatewayOptions d;
  *o = vlimb_gateway_options{};
  o->port = d.port;
  o->http_port = d.http_port;
  o->stream_rate_hz = d.stream_rate;
  o->time_scale = d.time_scale;
  o->dt = d.params.dt;
}

vlimb_status vlimb_gateway_start(const vlimb_model* model, const vlimb_gateway_options* options, vlimb_gateway** out) {
  VLIMB_REQUIRE(model && out, "model or out is null");
  vlimb_gateway_options o;
  vlimb_gateway_options_init(&o);
  if (options) o = *options;
  VLIMB_REQUIRE(o.port >= 0 && o.port < 65536 && o.http_port < 65536, "port out of range");
  VLIMB_REQUIRE(o.stream_rate_hz > 0.0 && o.time_scale > 0.0, "stream rate and time scale must be > 0");
  VLIMB_REQUIRE(o.dt > 0.0 && o.dt <= 2e-3, "dt must be in (0, 0.002] s");
  return guarded([&] {
    vlimb::GatewayOptions g;
    if (o.host) g.host = o.host;
    g.port = o.port;
    g.http_port = o.http_port;
    if (o.static_dir) g.static_dir = o.static_dir;
    g.stream_rate = o.stream_rate_hz;
    g.time_scale = o.time_scale;
    g.params.dt = o.dt;
    if (o.data_dir) g.data_dir = o.data_dir;
    if (o.scenario) g.scenario = o.scenario;
    auto gw = std::make_unique<vlimb::Gateway>(model->model, g);
    gw->start();
    *out = new vlimb_gateway{std::move(gw)};
    return VLIMB_OK;
  });
}

int vlimb_gateway_port(const vlimb_gateway* g) { return g ? g->gateway->port() : -1; }
int vlimb_gateway_http_port(const vlimb_gateway* g) { return g ? g->gateway->http_port() : -1; }

vlimb_status vlimb_gateway_command(vlimb_gateway* g, const char* message, char** reply) {
  VLIMB_REQUIRE(g && message, "gateway or message is null");
  return guarded([&] {
    nlohmann::json r;
    try {
      r = g->gateway->handle(nlohmann::json::parse(message));
    } catch (const nlohmann::json::parse_error& e) {
      r = {{"type", "error"}, {"reason", std::string("malformed: invalid JSON: ") + e.what()}};
    }
    if (reply) *reply = copy_string(r.dump());
    const auto type = r.value("type", "");
    if (type == "ack") return VLIMB_OK;
    if (type == "nack") return fail(VLIMB_E_REJECTED, r.value("reason", ""));
    return fail(VLIMB_E_PARSE, r.value("reason", ""));
  });
}

int vlimb_gateway_wait(vlimb_gateway* g, double timeout_s) {
  if (!g) return 1;
  if (timeout_s < 0.0) {
    g->gateway->wait();
    return 1;
  }
  return g->gateway->wait_for(timeout_s) ? 1 : 0;
}

void vlimb_gateway_stop(vlimb_gateway* g) {
  if (g) g->gateway->stop();
}

void vlimb_gateway_free(vlimb_gateway* g) { delete g; }

vlimb_status vlimb_gateway_schema(char** out) {
  VLIMB_REQUIRE(out, "out is null");
  return guarded([&] {
    *out = copy_string(vlimb::gateway_schema().dump(2) + "\n");
    return VLIMB_OK;
  });
}

}  // extern "C"
