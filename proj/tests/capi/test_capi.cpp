// Exercises the shared library through its C header only.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <vlimb/vlimb.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

struct Model {
  vlimb_model* m = nullptr;
  Model() { REQUIRE(vlimb_model_default(&m) == VLIMB_OK); }
  ~Model() { vlimb_model_free(m); }
};

std::string take(char* s) {
  std::string out = s ? s : "";
  vlimb_free_string(s);
  return out;
}

}  // namespace

TEST_CASE("pulley torque for the two design tensions") {
  Model model;
  size_t e = 0;
  REQUIRE(vlimb_model_element_index(model.m, "wire_elbow_power", &e) == VLIMB_OK);
  double current = 0, torque = 0;
  int sat = -1;
  REQUIRE(vlimb_tension_to_current(model.m, e, 600.0, &current, &torque, &sat) == VLIMB_OK);
  CHECK(std::abs(torque - 3.6) < 1e-9);
  // 0.6 N*m per A at the pulley: torque constant 0.1 through a 6:1 gear.
  CHECK(std::abs(current - 6.0) < 1e-9);
  CHECK(sat == 0);
  REQUIRE(vlimb_tension_to_current(model.m, e, 1500.0, &current, &torque, &sat) == VLIMB_OK);
  CHECK(std::abs(torque - 9.0) < 1e-9);
  CHECK(current <= 15.0 + 1e-12);
  REQUIRE(vlimb_tension_to_current(model.m, e, 2000.0, &current, nullptr, &sat) == VLIMB_OK);
  CHECK(sat == 1);
  CHECK(current == doctest::Approx(15.0));
}

TEST_CASE("error codes and last error") {
  Model model;
  vlimb_model* m = nullptr;
  CHECK(vlimb_model_load("/nonexistent/model.json", &m) == VLIMB_E_IO);
  CHECK(m == nullptr);
  CHECK(std::string(vlimb_last_error()).find("nonexistent") != std::string::npos);
  CHECK(vlimb_model_load(nullptr, &m) == VLIMB_E_INVALID_ARGUMENT);

  const auto dir = std::filesystem::temp_directory_path() / "vlimb_capi_test";
  std::filesystem::create_directories(dir);
  const auto bad = (dir / "bad.json").string();
  std::ofstream(bad) << "{ \"joints\": [";
  CHECK(vlimb_model_load(bad.c_str(), &m) == VLIMB_E_PARSE);

  // Parses but a joint limit is inverted.
  char* text = nullptr;
  REQUIRE(vlimb_model_to_json(model.m, &text) == VLIMB_OK);
  std::string json = take(text);
  const auto pos = json.find("\"limit_lo");
  REQUIRE(pos != std::string::npos);
  const auto colon = json.find(':', pos);
  const auto end = json.find_first_of(",\n}", colon);
  json.replace(colon + 1, end - colon - 1, " 99.0");
  const auto invalid = (dir / "invalid.json").string();
  std::ofstream(invalid) << json;
  CHECK(vlimb_model_load(invalid.c_str(), &m) == VLIMB_E_MODEL);

  size_t idx = 0;
  CHECK(vlimb_model_element_index(model.m, "no_such_wire", &idx) == VLIMB_E_INVALID_ARGUMENT);
  CHECK(vlimb_tension_to_current(model.m, 99, 1.0, nullptr, nullptr, nullptr) == VLIMB_E_INVALID_ARGUMENT);
  CHECK(std::string(vlimb_status_name(VLIMB_E_REJECTED)).size() > 0);
}

TEST_CASE("model JSON round trip") {
  Model model;
  char* text = nullptr;
  REQUIRE(vlimb_model_to_json(model.m, &text) == VLIMB_OK);
  const auto path = (std::filesystem::temp_directory_path() / "vlimb_capi_roundtrip.json").string();
  std::ofstream(path) << take(text);
  vlimb_model* again = nullptr;
  REQUIRE(vlimb_model_load(path.c_str(), &again) == VLIMB_OK);
  CHECK(vlimb_model_validate(again) == VLIMB_OK);
  CHECK(vlimb_model_element_count(again) == vlimb_model_element_count(model.m));
  vlimb_model_free(again);
}

TEST_CASE("unknown scenario") {
  Model model;
  vlimb_run_options o;
  vlimb_run_options_init(&o);
  o.data_dir = VLIMB_DATA_DIR;
  vlimb_report* r = nullptr;
  CHECK(vlimb_run_scenario(model.m, "juggle", &o, &r) == VLIMB_E_INVALID_ARGUMENT);
  CHECK(r == nullptr);
}

TEST_CASE("gateway through the C interface") {
  Model model;
  vlimb_gateway_options o;
  vlimb_gateway_options_init(&o);
  o.port = 0;
  o.http_port = -1;
  o.data_dir = VLIMB_DATA_DIR;
  vlimb_gateway* g = nullptr;
  REQUIRE(vlimb_gateway_start(model.m, &o, &g) == VLIMB_OK);
  CHECK(vlimb_gateway_port(g) > 0);
  CHECK(vlimb_gateway_http_port(g) <= 0);

  char* reply = nullptr;
  CHECK(vlimb_gateway_command(g, R"({"type":"set_target","q_des":[0,2.0,0.5,0.8,0]})", &reply) == VLIMB_E_REJECTED);
  CHECK(take(reply).find("joint limit") != std::string::npos);
  CHECK(vlimb_gateway_command(g, "{oops", &reply) == VLIMB_E_PARSE);
  CHECK(take(reply).find("\"error\"") != std::string::npos);
  CHECK(vlimb_gateway_command(g, R"({"type":"pause"})", &reply) == VLIMB_OK);
  take(reply);
  CHECK(vlimb_gateway_wait(g, 0.05) == 0);
  CHECK(vlimb_gateway_command(g, R"({"type":"shutdown"})", &reply) == VLIMB_OK);
  take(reply);
  CHECK(vlimb_gateway_wait(g, 2.0) == 1);
  vlimb_gateway_stop(g);
  vlimb_gateway_free(g);

  char* schema = nullptr;
  REQUIRE(vlimb_gateway_schema(&schema) == VLIMB_OK);
  CHECK(take(schema).find("set_target") != std::string::npos);
}
