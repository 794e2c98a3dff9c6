#include <doctest.h>
#include <model.hpp>
#include <gateway.hpp>

#include <httplib.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

using namespace vlimb;
using nlohmann::json;

namespace {

GatewayOptions test_options() {
  GatewayOptions o;
  o.port = 0;
  o.http_port = 0;
  o.data_dir = VLIMB_DATA_DIR;
  o.time_scale = 4.0;
  return o;
}

// Minimal blocking line client.
class LineClient {
 public:
  explicit LineClient(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_port = htons(static_cast<uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &a.sin_addr);
    REQUIRE(::connect(fd_, reinterpret_cast<sockaddr*>(&a), sizeof a) == 0);
  }
  ~LineClient() { ::close(fd_); }

  void send(const std::string& line) {
    const std::string s = line + "\n";
    REQUIRE(::send(fd_, s.data(), s.size(), MSG_NOSIGNAL) == static_cast<ssize_t>(s.size()));
  }

  // Next message whose type is not "state"; empty on timeout.
  json next_reply(double timeout_s = 5.0) {
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(timeout_s));
    for (;;) {
      json m = next(deadline);
      if (m.is_null() || m.value("type", "") != "state") return m;
    }
  }

  json next_state(double timeout_s = 5.0) {
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(timeout_s));
    for (;;) {
      json m = next(deadline);
      if (m.is_null() || m.value("type", "") == "state") return m;
    }
  }

 private:
  json next(std::chrono::steady_clock::time_point deadline) {
    for (;;) {
      if (const auto pos = buf_.find('\n'); pos != std::string::npos) {
        const std::string line = buf_.substr(0, pos);
        buf_.erase(0, pos + 1);
        return json::parse(line);
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return nullptr;
      pollfd p{fd_, POLLIN, 0};
      if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) return nullptr;
      char chunk[8192];
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n <= 0) return nullptr;
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  int fd_ = -1;
  std::string buf_;
};

}  // namespace

TEST_CASE("schema covers every command and reply") {
  const json s = gateway_schema();
  const std::string text = s.dump();
  for (const char* t : {"set_target", "switch_mode", "set_payload", "grasp", "release", "load_scenario", "pause",
                        "resume", "reset", "state", "ack", "nack", "error", "hello"})
    CHECK_MESSAGE(text.find(std::string("\"") + t + "\"") != std::string::npos, t);
}

TEST_CASE("committed schema file matches the generated schema") {
  std::ifstream f(std::string(VLIMB_DATA_DIR) + "/gateway_schema.json");
  REQUIRE(f);
  CHECK(json::parse(f) == gateway_schema());
}

TEST_CASE("gateway direct command handling") {
  Gateway g(default_vlimb(), test_options());
  g.start();

  SUBCASE("joint limit rejected") {
    const json r = g.handle({{"type", "set_target"}, {"q_des", {0.0, 2.0, 0.5, 0.8, 0.0}}, {"id", 7}});
    CHECK(r["type"] == "nack");
    CHECK(r["id"] == 7);
    CHECK(r["reason"].get<std::string>().find("joint limit") != std::string::npos);
  }
  SUBCASE("switch mode while moving") {
    REQUIRE(g.handle({{"type", "set_target"}, {"q_des", {0.3, 0.5, 0.6, 0.9, 0.2}}})["type"] == "ack");
    const json r = g.handle({{"type", "switch_mode"}, {"name", "power"}});
    CHECK(r["type"] == "nack");
    CHECK(r["reason"].get<std::string>().find("not stationary") != std::string::npos);
  }
  SUBCASE("pause relaxes the wires so the mode can change") {
    REQUIRE(g.handle({{"type", "pause"}})["type"] == "ack");
    json r;
    for (int i = 0; i < 40; ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      r = g.handle({{"type", "switch_mode"}, {"name", "power"}});
      if (r["type"] == "ack") break;
    }
    CHECK(r["type"] == "ack");
    std::this_thread::sleep_for(std::chrono::milliseconds(150));
    CHECK(g.latest_state()["mode"] == "power");
  }
  SUBCASE("malformed shapes") {
    CHECK(g.handle({{"type", "set_target"}, {"q_des", {1.0, 2.0}}})["type"] == "error");
    CHECK(g.handle({{"type", "warp"}})["type"] == "error");
    CHECK(g.handle(json::array())["type"] == "error");
  }
  SUBCASE("unknown scenario is refused, known one loads") {
    CHECK(g.handle({{"type", "load_scenario"}, {"name", "nope"}})["type"] == "nack");
    CHECK(g.handle({{"type", "load_scenario"}, {"name", "lift"}})["type"] == "ack");
  }
  g.stop();
  CHECK(g.wait_for(0.1));
}

TEST_CASE("gateway over TCP") {
  auto o = test_options();
  o.http_port = -1;
  o.stream_rate = 50.0;
  Gateway g(default_vlimb(), o);
  g.start();
  REQUIRE(g.port() > 0);
  LineClient c(g.port());

  const json hello = c.next_reply();
  REQUIRE(hello.is_object());
  CHECK(hello["type"] == "hello");
  CHECK(hello["model"]["joints"].size() == 5);

  // Streams at roughly the configured rate.
  const json s0 = c.next_state();
  REQUIRE(s0.is_object());
  CHECK(s0["q"].size() == 5);
  CHECK(s0["flags"].contains("saturation"));

  c.send("{not json");
  const json err = c.next_reply();
  CHECK(err["type"] == "error");
  CHECK(err["reason"].get<std::string>().rfind("malformed", 0) == 0);

  // Connection survives the bad line.
  c.send(R"({"type":"set_target","q_des":[0,2.0,0.5,0.8,0],"id":"a"})");
  const json nack = c.next_reply();
  CHECK(nack["type"] == "nack");
  CHECK(nack["id"] == "a");
  CHECK(nack["reason"].get<std::string>().find("joint limit") != std::string::npos);

  c.send(R"({"type":"set_target","q_des":[0.2,0.3,0.5,0.8,0],"duration_s":0.5})");
  CHECK(c.next_reply()["type"] == "ack");
  json later;
  for (int i = 0; i < 100; ++i) {
    later = c.next_state();
    if (later.is_object() && std::abs(later["q_ref"][0].get<double>()) > 1e-3) break;
  }
  CHECK(later["q_ref"][0].get<double>() > 1e-3);

  c.send(R"({"type":"shutdown"})");
  CHECK(c.next_reply()["type"] == "ack");
  CHECK(g.wait_for(2.0));
  g.stop();
}

TEST_CASE("gateway over HTTP") {
  Gateway g(default_vlimb(), test_options());
  g.start();
  REQUIRE(g.http_port() > 0);
  httplib::Client cli("127.0.0.1", g.http_port());

  auto schema = cli.Get("/api/schema");
  REQUIRE(schema);
  CHECK(schema->status == 200);
  CHECK(json::parse(schema->body) == gateway_schema());

  auto model = cli.Get("/api/model");
  REQUIRE(model);
  CHECK(json::parse(model->body)["type"] == "model_info");

  auto bad = cli.Post("/api/command", "{", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  auto nack = cli.Post("/api/command", R"({"type":"set_target","q_des":[0,2.0,0.5,0.8,0]})", "application/json");
  REQUIRE(nack);
  CHECK(nack->status == 409);

  auto ok = cli.Post("/api/command", R"({"type":"pause"})", "application/json");
  REQUIRE(ok);
  CHECK(ok->status == 200);

  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  auto state = cli.Get("/api/state");
  REQUIRE(state);
  CHECK(json::parse(state->body)["flags"]["paused"] == true);
  g.stop();
}

TEST_CASE("bind failure is reported") {
  Gateway a(default_vlimb(), test_options());
  a.start();
  auto o = test_options();
  o.port = a.port();
  Gateway b(default_vlimb(), o);
  CHECK_THROWS_AS(b.start(), std::runtime_error);
  a.stop();
}
