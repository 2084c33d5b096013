// SPDX-License-Identifier: Apache-2.0
//
// JSON-over-HTTP front end for generation and interactive editing.
//
//   GET  /health              "ok"
//   GET  /schema              category and part lists
//   POST /generate            generation request -> new session
//   POST /edit                {"session_id", "edits": [...], "seed"?}
//   POST /addpart             {"session_id", "part", "seed"?}
//   GET  /session/<id>        current session state
//   GET  /layout/<id>.png     current label map as a palette PNG
//
// Unknown sessions answer 404, malformed bodies 400, rejected requests and
// edits 422 with {"error": reason}.
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>

#include "opal/pipeline.hpp"

namespace opal::service {

inline constexpr std::size_t kDefaultSessionCapacity = 1024;

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t session_capacity = kDefaultSessionCapacity;
  std::size_t worker_threads = 4;
  /// Mixed into session ids so that two service instances do not collide.
  std::uint64_t session_salt = 0;
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Request handling and session storage. Models are shared read-only; each
/// session is guarded by its own mutex and the store by another.
class LayoutService {
 public:
  LayoutService(std::shared_ptr<const pipeline::ModelBundle> models, ServiceOptions options = {});
  ~LayoutService();
  LayoutService(const LayoutService&) = delete;
  LayoutService& operator=(const LayoutService&) = delete;

  /// Routes one request without a socket.
  Response handle(const std::string& method, const std::string& path, const std::string& body) const;

  std::size_t session_count() const;
  const ServiceOptions& options() const;

  /// Binds and serves until stop(); returns false when the bind fails.
  bool listen();
  /// Binds to an ephemeral port (options().port is ignored) and serves on a
  /// background thread. Returns the bound port, or -1.
  int start_background();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace opal::service
