#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "edgecl/continual_trainer.hpp"

namespace httplib {
class Server;
}

namespace edgecl {

struct ServiceOptions {
  std::size_t default_dim = 64;
  std::size_t default_classes = 4;
  std::size_t default_capacity = 40;
  std::size_t default_quota = 10;
  std::size_t max_classes = 16;
  std::size_t staging_limit = 1000;  // per class
  std::chrono::seconds idle_timeout{3600};
  std::uint64_t image_seed = 0;  // shared by every session so paired sessions see identical features
  std::string cors_origin = "*";
  std::function<std::chrono::steady_clock::time_point()> clock = [] { return std::chrono::steady_clock::now(); };
};

struct ApiResponse {
  int status = 200;
  std::string body;  // JSON
};

/// JSON API over interactive sessions. Requests touching one session are
/// serialized by that session's mutex; different sessions proceed in parallel.
///
///   POST /sessions                 {mode, dim?, classes?, train_config?, buffer_config?}
///   POST /sessions/{id}/samples    {class, features:[...]} | {class, image:{w,h,pixels_base64}}
///   POST /sessions/{id}/train      {scope:"staged_all"} | {scope:"staged_class", class:c}
///   POST /sessions/{id}/predict    {features:[...]} | {image:{...}}
///   POST /sessions/{id}/reset
///   GET  /sessions/{id}/state
class SessionService {
 public:
  explicit SessionService(ServiceOptions options = {});
  ~SessionService();

  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  /// Transport-independent dispatch, used by the HTTP routes and by tests.
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body);

  /// Installs the API routes (and CORS handling) on an httplib server.
  void register_routes(httplib::Server& server);

  std::size_t session_count();
  const ServiceOptions& options() const { return options_; }

 private:
  struct Entry;

  ApiResponse create(const std::string& body);
  ApiResponse add_samples(Entry& e, const std::string& body);
  ApiResponse train(Entry& e, const std::string& body);
  ApiResponse predict(Entry& e, const std::string& body);
  ApiResponse reset(Entry& e);
  ApiResponse state(Entry& e);

  std::shared_ptr<Entry> find(const std::string& id);
  void expire_idle();
  std::string new_id();

  ServiceOptions options_;
  std::mutex registry_mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  Rng id_rng_;
};

/// Runs the API (plus an optional static UI bundle) until `stop` is signalled.
/// `on_bound` receives the actual port once listening (useful with port 0).
/// Returns false if the socket could not be bound.
bool serve(SessionService& service, const std::string& host, int port,
           const std::optional<std::filesystem::path>& static_dir, const std::function<void(int)>& on_bound,
           std::function<void(std::function<void()>)> install_stop);

std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace edgecl
