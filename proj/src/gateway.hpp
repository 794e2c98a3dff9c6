#pragma once

// Networked bridge to a live simulation: streams state to clients and takes
// commands. Newline-delimited JSON over TCP, plus an HTTP endpoint for
// browsers (static assets, model info, schema, commands and an NDJSON state
// stream).
//
// Three kinds of task talk only through queues:
//   - the control loop owns the plant, controller and trajectory;
//   - the broadcaster forwards the latest snapshot at the stream rate;
//   - one reader per connection parses commands and waits for the loop's reply.

#include "plant.hpp"

#include <json.hpp>

#include <atomic>
#include <memory>
#include <string>

namespace vlimb {

inline constexpr int kGatewaySchemaVersion = 1;

struct GatewayOptions {
  std::string host = "127.0.0.1";
  int port = 8765;       // TCP JSON lines; 0 picks a free port
  int http_port = 8766;  // 0 picks a free port, negative disables HTTP
  std::string static_dir;  // served at / when set
  double stream_rate = 30.0;  // Hz, wall clock
  double time_scale = 1.0;    // simulated seconds per wall second
  std::string data_dir;       // scenario files; empty: default
  std::string scenario;       // loaded at start; empty: home posture
  PlantParams params;
};

// JSON Schema (2020-12) for every message in both directions.
nlohmann::json gateway_schema();

// Joint names and limits, elements, modes and controller limits; sent to each
// client on connect.
nlohmann::json model_info(const RobotModel& model, const GatewayOptions& options);

class Gateway {
 public:
  Gateway(RobotModel model, GatewayOptions options);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  // Binds and starts every task. Throws std::runtime_error on bind failure.
  void start();
  // Idempotent; joins every task.
  void stop();
  // Blocks until stop() is called or a client sends {"type":"shutdown"}.
  void wait();
  // As wait(), giving up after `seconds`; true once shut down.
  bool wait_for(double seconds);

  int port() const;
  int http_port() const;

  // Validates and executes one command message; returns the ack, nack or
  // error reply. Safe from any thread.
  nlohmann::json handle(const nlohmann::json& message);
  // Latest published state message (null before the first step).
  nlohmann::json latest_state() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace vlimb
