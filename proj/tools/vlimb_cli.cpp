// vlimb command-line tool. Talks to the library through the C interface only.
//
//   vlimb validate [MODEL]
//   vlimb run <reachability|manipulation|lift|all> [overrides] [--out DIR]
//   vlimb serve [--port N] [--http-port N] [--static DIR] ...
//   vlimb report <CSV>...
//   vlimb schema
//
// Exit codes: 0 success / scenario passed, 1 scenario failed, 2 usage or
// configuration error.

#include <vlimb/vlimb.h>

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

int report_error(const std::string& what, vlimb_status status) {
  std::cerr << "vlimb: " << what << ": " << vlimb_status_name(status);
  const std::string detail = vlimb_last_error();
  if (!detail.empty()) std::cerr << ": " << detail;
  std::cerr << "\n";
  return kUsage;
}

struct ModelHandle {
  vlimb_model* model = nullptr;
  ~ModelHandle() { vlimb_model_free(model); }
};

// "default-model" (or nothing, with VLIMB_MODEL unset) selects the built-in set.
vlimb_status open_model(std::string path, ModelHandle& h) {
  if (path.empty())
    if (const char* env = std::getenv("VLIMB_MODEL"); env && *env) path = env;
  if (path.empty() || path == "default-model") return vlimb_model_default(&h.model);
  return vlimb_model_load(path.c_str(), &h.model);
}

std::string take(char* s) {
  std::string out = s ? s : "";
  vlimb_free_string(s);
  return out;
}

int env_port(const char* name, int fallback) {
  const char* v = std::getenv(name);
  if (!v || !*v) return fallback;
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    return fallback;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vlimb: simulator and controller for a 5-DOF wire-driven arm"};
  app.require_subcommand(1);
  app.set_version_flag("--version", vlimb_version());
  std::string model_path;
  app.add_option("--model", model_path, "Model file, or 'default-model' (env VLIMB_MODEL)");

  // validate
  auto* validate = app.add_subcommand("validate", "Parse and check a model file");
  std::string validate_path;
  validate->add_option("model", validate_path, "Model file or 'default-model'");

  // run
  auto* run = app.add_subcommand("run", "Run a scenario and write CSV, summary and plot script");
  std::string scenario;
  std::string out_dir = "out";
  std::string data_dir;
  std::optional<std::string> mode;
  std::optional<double> payload;
  std::optional<double> kp;
  double dt = 1e-3;
  int log_every = 10;
  bool contact = false;
  run->add_option("scenario", scenario, "reachability, manipulation, lift or all")
      ->required()
      ->check(CLI::IsMember({"reachability", "manipulation", "lift", "all"}));
  run->add_option("-o,--out", out_dir, "Output directory")->capture_default_str();
  run->add_option("--data-dir", data_dir, "Scenario data directory (env VLIMB_DATA_DIR)");
  run->add_option("--mode", mode, "Routing mode override (manipulation, power)");
  run->add_option("--payload-kg", payload, "Payload override, kg")->check(CLI::NonNegativeNumber);
  run->add_option("--dt", dt, "Plant step, s")->check(CLI::Range(1e-5, 2e-3))->capture_default_str();
  run->add_option("--kp", kp, "Uniform joint stiffness override, N*m/rad")->check(CLI::NonNegativeNumber);
  run->add_option("--log-every", log_every, "Plant steps per CSV row")->check(CLI::PositiveNumber)->capture_default_str();
  run->add_flag("--belt-wire-contact", contact, "Lift: enable belt/wire rubbing and wind the full stroke");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the live simulation behind the network gateway");
  vlimb_gateway_options gopt;
  vlimb_gateway_options_init(&gopt);
  std::string host = "127.0.0.1";
  std::string static_dir;
  std::string serve_scenario;
  std::string schema_out;
  std::string serve_data_dir;
  gopt.port = env_port("VLIMB_GATEWAY_PORT", gopt.port);
  gopt.http_port = env_port("VLIMB_HTTP_PORT", gopt.http_port);
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", gopt.port, "TCP port for JSON lines (env VLIMB_GATEWAY_PORT)")
      ->check(CLI::Range(0, 65535))
      ->capture_default_str();
  serve->add_option("--http-port", gopt.http_port, "HTTP port; negative disables (env VLIMB_HTTP_PORT)")
      ->check(CLI::Range(-1, 65535))
      ->capture_default_str();
  serve->add_option("--static", static_dir, "Directory served at / over HTTP")->check(CLI::ExistingDirectory);
  serve->add_option("--stream-rate", gopt.stream_rate_hz, "State messages per second")
      ->check(CLI::Range(0.1, 1000.0))
      ->capture_default_str();
  serve->add_option("--time-scale", gopt.time_scale, "Simulated seconds per wall second")
      ->check(CLI::Range(0.01, 100.0))
      ->capture_default_str();
  serve->add_option("--scenario", serve_scenario, "Initial scenario (home, reachability, manipulation, lift)");
  serve->add_option("--data-dir", serve_data_dir, "Scenario data directory");
  serve->add_option("--schema-out", schema_out, "Write the message schema to this file first");
  double serve_seconds = 0.0;
  serve->add_option("--duration", serve_seconds, "Stop after this many wall seconds (0: until interrupted)")
      ->check(CLI::NonNegativeNumber);

  // report
  auto* report = app.add_subcommand("report", "Describe scenario CSV files");
  std::vector<std::string> csv_files;
  double cap = 1500.0;
  report->add_option("csv", csv_files, "Scenario CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("--cap", cap, "Tension cap to check against, N")->capture_default_str();

  auto* schema_cmd = app.add_subcommand("schema", "Print the gateway message schema (JSON Schema)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }

  if (*validate) {
    ModelHandle m;
    const std::string path = validate_path.empty() ? model_path : validate_path;
    if (const auto st = open_model(path, m); st != VLIMB_OK) return report_error("model", st);
    if (const auto st = vlimb_model_validate(m.model); st != VLIMB_OK) return report_error("model", st);
    std::cout << "model OK: " << (path.empty() ? "default-model" : path) << " ("
              << vlimb_model_element_count(m.model) << " elements)\n";
    return kPass;
  }

  if (*schema_cmd) {
    char* schema = nullptr;
    if (const auto st = vlimb_gateway_schema(&schema); st != VLIMB_OK) return report_error("schema", st);
    std::cout << take(schema);
    return kPass;
  }

  if (*report) {
    for (const auto& f : csv_files) {
      char* text = nullptr;
      if (const auto st = vlimb_csv_describe(f.c_str(), cap, &text); st != VLIMB_OK) return report_error(f, st);
      std::cout << take(text) << "\n";
    }
    return kPass;
  }

  ModelHandle m;
  if (const auto st = open_model(model_path, m); st != VLIMB_OK) return report_error("model", st);

  if (*run) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
      std::cerr << "vlimb: output directory '" << out_dir << "' is not writable\n";
      return kUsage;
    }
    vlimb_run_options o;
    vlimb_run_options_init(&o);
    if (!data_dir.empty()) o.data_dir = data_dir.c_str();
    if (mode) o.mode = mode->c_str();
    if (payload) {
      o.has_payload = 1;
      o.payload_kg = *payload;
    }
    if (kp) {
      o.has_kp = 1;
      o.kp = *kp;
    }
    o.dt = dt;
    o.log_every = log_every;
    o.belt_wire_contact = contact ? 1 : 0;

    const std::vector<std::string> names =
        scenario == "all" ? std::vector<std::string>{"reachability", "manipulation", "lift"}
                          : std::vector<std::string>{scenario};
    bool all_passed = true;
    for (const auto& name : names) {
      vlimb_report* r = nullptr;
      if (const auto st = vlimb_run_scenario(m.model, name.c_str(), &o, &r); st != VLIMB_OK)
        return report_error("run " + name, st);
      char* summary = nullptr;
      vlimb_report_summary(r, &summary);
      std::cout << take(summary);
      const auto st = vlimb_report_write(r, out_dir.c_str());
      const bool passed = vlimb_report_passed(r) != 0;
      vlimb_report_free(r);
      if (st != VLIMB_OK) return report_error("write " + out_dir, st);
      all_passed = all_passed && passed;
    }
    std::cout << "artifacts: " << out_dir << "\n";
    return all_passed ? kPass : kFail;
  }

  // serve
  if (!schema_out.empty()) {
    char* schema = nullptr;
    if (const auto st = vlimb_gateway_schema(&schema); st != VLIMB_OK) return report_error("schema", st);
    std::ofstream f(schema_out, std::ios::binary);
    f << take(schema);
    if (!f) {
      std::cerr << "vlimb: cannot write '" << schema_out << "'\n";
      return kUsage;
    }
  }
  gopt.host = host.c_str();
  if (!static_dir.empty()) gopt.static_dir = static_dir.c_str();
  if (!serve_scenario.empty()) gopt.scenario = serve_scenario.c_str();
  if (!serve_data_dir.empty()) gopt.data_dir = serve_data_dir.c_str();
  vlimb_gateway* g = nullptr;
  if (const auto st = vlimb_gateway_start(m.model, &gopt, &g); st != VLIMB_OK) return report_error("serve", st);
  std::cout << "gateway: tcp://" << host << ":" << vlimb_gateway_port(g);
  if (vlimb_gateway_http_port(g) > 0) std::cout << "  http://" << host << ":" << vlimb_gateway_http_port(g);
  std::cout << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  double waited = 0.0;
  while (!g_interrupted) {
    if (vlimb_gateway_wait(g, 0.2)) break;
    waited += 0.2;
    if (serve_seconds > 0.0 && waited >= serve_seconds) break;
  }
  vlimb_gateway_stop(g);
  vlimb_gateway_free(g);
  return kPass;
}
