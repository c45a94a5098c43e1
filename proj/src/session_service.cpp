#include "edgecl/session_service.hpp"

#include <random>
#include <regex>

#include <httplib.h>
#include <json.hpp>

#include "edgecl/feature_sources.hpp"

namespace edgecl {

using nlohmann::json;

struct SessionService::Entry {
  std::mutex mu;
  std::string id;
  Session session;
  json config;
  std::vector<std::vector<VectorF>> staged;
  std::chrono::steady_clock::time_point created;
  std::chrono::steady_clock::time_point last_touched;

  Entry(std::string id_, Session s, json cfg, std::chrono::steady_clock::time_point now)
      : id(std::move(id_)), session(std::move(s)), config(std::move(cfg)), staged(session.classes()),
        created(now), last_touched(now) {}
};

namespace {

/// Raised inside handlers; mapped to an HTTP status and {"error": message}.
struct ApiError {
  int status;
  std::string message;
};

ApiResponse ok(int status, const json& body) { return {status, body.dump()}; }

ApiResponse error_response(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

json parse_body(const std::string& body, bool allow_empty = false) {
  if (allow_empty && body.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw ApiError{400, "request body must be a JSON object"};
    return j;
  } catch (const json::exception& e) {
    throw ApiError{400, std::string("invalid JSON: ") + e.what()};
  }
}

void only_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ApiError{400, where + " must be an object"};
  for (const auto& [key, _] : obj.items())
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end())
      throw ApiError{400, "unknown field \"" + key + "\" in " + where};
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ApiError{400, std::string("field \"") + key + "\" has the wrong type"};
  }
}

std::size_t get_count(const json& obj, const char* key, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ApiError{400, std::string("field \"") + key + "\" must be a non-negative integer"};
  return v.get<std::size_t>();
}

json histogram_json(const std::map<ClassIndex, std::size_t>& h) {
  json arr = json::array();
  for (const auto& [_, n] : h) arr.push_back(n);
  return arr;
}

json event_json(const TrainEvent& ev) {
  json j{{"kind", ev.kind == TrainEvent::Kind::train ? "train" : "reset"},
         {"tag", ev.tag},
         {"samples_seen", ev.samples_seen},
         {"replayed", ev.replayed},
         {"epochs_run", ev.epochs_run},
         {"final_loss", ev.final_loss},
         {"duration_ms", ev.duration_ms}};
  if (ev.buffer_occupancy) j["buffer_occupancy"] = *ev.buffer_occupancy;
  if (ev.buffer_histogram) j["buffer_histogram"] = histogram_json(*ev.buffer_histogram);
  return j;
}

json staged_counts(const std::vector<std::vector<VectorF>>& staged) {
  json arr = json::array();
  for (const auto& s : staged) arr.push_back(s.size());
  return arr;
}

VectorF features_from(const json& req, std::size_t dim, std::uint64_t image_seed) {
  const bool has_features = req.contains("features");
  const bool has_image = req.contains("image");
  if (has_features == has_image) throw ApiError{400, "exactly one of \"features\" or \"image\" is required"};
  if (has_features) {
    const json& arr = req.at("features");
    if (!arr.is_array()) throw ApiError{400, "\"features\" must be an array of numbers"};
    if (arr.size() != dim)
      throw ApiError{400, "expected " + std::to_string(dim) + " features, got " + std::to_string(arr.size())};
    VectorF x(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < dim; ++i) {
      if (!arr[i].is_number()) throw ApiError{400, "\"features\" must contain only numbers"};
      const double v = arr[i].get<double>();
      if (!std::isfinite(v) || !std::isfinite(static_cast<float>(v)))
        throw ApiError{400, "feature values must be finite"};
      x[static_cast<Eigen::Index>(i)] = static_cast<float>(v);
    }
    return x;
  }
  const json& img = req.at("image");
  only_keys(img, {"w", "h", "pixels_base64"}, "image");
  const std::size_t w = get_count(img, "w", 0);
  const std::size_t h = get_count(img, "h", 0);
  const auto pixels = base64_decode(get_or<std::string>(img, "pixels_base64", ""));
  if (w == 0 || h == 0 || pixels.empty()) throw ApiError{400, "image must be non-empty"};
  if (pixels.size() != w * h)
    throw ApiError{400, "image has " + std::to_string(pixels.size()) + " pixels, expected w*h = " +
                            std::to_string(w * h)};
  return project_image(pixels, w, h, dim, image_seed);
}

const std::regex kSessionPath(R"(^/sessions/([0-9a-f]{32})(?:/(samples|train|predict|reset|state))?$)");

}  // namespace

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  std::size_t padding = 0;
  for (char c : text) {
    if (c == '=') {
      ++padding;
      continue;
    }
    if (c == '\n' || c == '\r' || c == ' ') continue;
    const auto pos = alphabet.find(c);
    if (pos == std::string::npos || padding > 0) throw ArgumentError("invalid base64 pixel data");
    acc = (acc << 6) | static_cast<std::uint32_t>(pos);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  if (padding > 2) throw ArgumentError("invalid base64 padding");
  return out;
}

SessionService::SessionService(ServiceOptions options) : options_(std::move(options)) {
  std::random_device rd;
  id_rng_.reseed((static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^
                 static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
}

SessionService::~SessionService() = default;

std::string SessionService::new_id() {
  static const char* hex = "0123456789abcdef";
  std::string id;
  do {
    id.clear();
    for (int w = 0; w < 2; ++w) {
      std::uint64_t v = id_rng_.next_u64();
      for (int i = 0; i < 16; ++i, v >>= 4) id.push_back(hex[v & 0xf]);
    }
  } while (sessions_.count(id));
  return id;
}

void SessionService::expire_idle() {
  const auto now = options_.clock();
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    std::unique_lock lock(it->second->mu, std::try_to_lock);
    if (lock.owns_lock() && now - it->second->last_touched > options_.idle_timeout)
      it = sessions_.erase(it);
    else
      ++it;
  }
}

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& id) {
  std::lock_guard lock(registry_mu_);
  expire_idle();
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t SessionService::session_count() {
  std::lock_guard lock(registry_mu_);
  expire_idle();
  return sessions_.size();
}

ApiResponse SessionService::handle(const std::string& method, const std::string& path, const std::string& body) {
  try {
    if (path == "/sessions") {
      if (method != "POST") return error_response(405, "method not allowed");
      return create(body);
    }
    std::smatch m;
    if (!std::regex_match(path, m, kSessionPath)) return error_response(404, "not found");
    const std::string action = m[2].str();
    if (action.empty()) return error_response(404, "not found");
    const bool is_get = action == "state";
    if ((is_get && method != "GET") || (!is_get && method != "POST")) return error_response(405, "method not allowed");

    auto entry = find(m[1].str());
    if (!entry) return error_response(404, "unknown session " + m[1].str());
    std::lock_guard lock(entry->mu);
    entry->last_touched = options_.clock();
    if (action == "samples") return add_samples(*entry, body);
    if (action == "train") return train(*entry, body);
    if (action == "predict") return predict(*entry, body);
    if (action == "reset") return reset(*entry);
    return state(*entry);
  } catch (const ApiError& e) {
    return error_response(e.status, e.message);
  } catch (const NumericError& e) {
    return error_response(422, e.what());
  } catch (const std::invalid_argument& e) {
    return error_response(400, e.what());
  } catch (const std::out_of_range& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

ApiResponse SessionService::create(const std::string& body) {
  const json req = parse_body(body, true);
  only_keys(req, {"mode", "dim", "classes", "hidden", "train_config", "buffer_config"}, "request");
  const Mode mode = mode_from_string(get_or<std::string>(req, "mode", "cl"));
  const std::size_t dim = get_count(req, "dim", options_.default_dim);
  const std::size_t classes = get_count(req, "classes", options_.default_classes);
  const std::size_t hidden = get_count(req, "hidden", Session::kDefaultHidden);
  if (dim == 0 || hidden == 0) throw ApiError{400, "dim and hidden must be >= 1"};
  if (classes == 0 || classes > options_.max_classes)
    throw ApiError{400, "classes must be between 1 and " + std::to_string(options_.max_classes)};

  TrainConfig train;
  train.seed = 1;
  if (req.contains("train_config")) {
    const json& t = req.at("train_config");
    only_keys(t, {"learning_rate", "epochs_per_batch", "minibatch_size", "seed", "replay_schedule"}, "train_config");
    train.learning_rate = get_or<double>(t, "learning_rate", train.learning_rate);
    train.epochs_per_batch = get_count(t, "epochs_per_batch", train.epochs_per_batch);
    train.minibatch_size = get_count(t, "minibatch_size", train.minibatch_size);
    train.seed = get_or<std::uint64_t>(t, "seed", train.seed);
    train.replay_schedule = schedule_from_string(get_or<std::string>(t, "replay_schedule", "sequential"));
  }
  train.validate();

  std::optional<ReplayOptions> replay;
  if (mode == Mode::tl && req.contains("buffer_config"))
    throw ApiError{400, "TL sessions do not take a buffer_config"};
  if (mode == Mode::cl) {
    ReplayOptions r;
    r.buffer.capacity = options_.default_capacity;
    r.buffer.seed = train.seed;
    r.intake = IntakeMode::per_class_quota;
    r.quota = options_.default_quota;
    if (req.contains("buffer_config")) {
      const json& b = req.at("buffer_config");
      only_keys(b, {"capacity", "policy", "replace_fraction", "seed", "intake", "quota"}, "buffer_config");
      r.buffer.capacity = get_count(b, "capacity", r.buffer.capacity);
      r.buffer.policy = policy_from_string(get_or<std::string>(b, "policy", "random"));
      r.buffer.replace_fraction = get_or<double>(b, "replace_fraction", r.buffer.replace_fraction);
      r.buffer.seed = get_or<std::uint64_t>(b, "seed", r.buffer.seed);
      const std::string intake = get_or<std::string>(b, "intake", "quota");
      if (intake == "quota")
        r.intake = IntakeMode::per_class_quota;
      else if (intake == "fraction")
        r.intake = IntakeMode::fraction;
      else
        throw ApiError{400, "buffer_config.intake must be \"quota\" or \"fraction\""};
      r.quota = get_count(b, "quota", r.quota);
      if (r.quota == 0) throw ApiError{400, "buffer_config.quota must be >= 1"};
    }
    r.buffer.validate();
    replay = r;
  }

  Session session(mode, dim, classes, train, replay, hidden);
  json config{{"mode", to_string(mode)},
              {"dim", dim},
              {"classes", classes},
              {"hidden", hidden},
              {"train_config",
               {{"learning_rate", train.learning_rate},
                {"epochs_per_batch", train.epochs_per_batch},
                {"minibatch_size", train.minibatch_size},
                {"seed", train.seed},
                {"replay_schedule", to_string(train.replay_schedule)}}}};
  if (replay)
    config["buffer_config"] = {{"capacity", replay->buffer.capacity},
                               {"policy", to_string(replay->buffer.policy)},
                               {"replace_fraction", replay->buffer.replace_fraction},
                               {"seed", replay->buffer.seed},
                               {"intake", replay->intake == IntakeMode::per_class_quota ? "quota" : "fraction"},
                               {"quota", replay->quota}};

  std::lock_guard lock(registry_mu_);
  expire_idle();
  const std::string id = new_id();
  sessions_.emplace(id, std::make_shared<Entry>(id, std::move(session), config, options_.clock()));
  return ok(201, json{{"id", id}, {"config", config}});
}

ApiResponse SessionService::add_samples(Entry& e, const std::string& body) {
  const json req = parse_body(body);
  only_keys(req, {"class", "features", "image"}, "request");
  if (!req.contains("class")) throw ApiError{400, "\"class\" is required"};
  const std::size_t cls = get_count(req, "class", 0);
  if (cls >= e.session.classes())
    throw ApiError{400, "class " + std::to_string(cls) + " out of range for " +
                            std::to_string(e.session.classes()) + " classes"};
  VectorF x = features_from(req, e.session.dim(), options_.image_seed);
  if (e.staged[cls].size() >= options_.staging_limit)
    throw ApiError{413, "staging limit of " + std::to_string(options_.staging_limit) + " samples reached for class " +
                            std::to_string(cls)};
  e.staged[cls].push_back(std::move(x));
  return ok(200, json{{"staged_counts", staged_counts(e.staged)}});
}

ApiResponse SessionService::train(Entry& e, const std::string& body) {
  const json req = parse_body(body);
  only_keys(req, {"scope", "class"}, "request");
  const std::string scope = get_or<std::string>(req, "scope", "");
  std::vector<ClassIndex> classes;
  std::string tag;
  if (scope == "staged_all") {
    for (ClassIndex c = 0; c < e.staged.size(); ++c) classes.push_back(c);
    tag = "staged_all";
  } else if (scope == "staged_class") {
    if (!req.contains("class")) throw ApiError{400, "scope staged_class needs \"class\""};
    const std::size_t c = get_count(req, "class", 0);
    if (c >= e.staged.size()) throw ApiError{400, "class " + std::to_string(c) + " out of range"};
    classes.push_back(c);
    tag = "class_" + std::to_string(c);
  } else {
    throw ApiError{400, "scope must be \"staged_all\" or \"staged_class\""};
  }

  Batch batch = Batch::with_dim(e.session.dim());
  std::size_t total = 0;
  for (auto c : classes) total += e.staged[c].size();
  if (total == 0) throw ApiError{409, "nothing staged for scope " + tag};
  batch.features.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(e.session.dim()));
  std::size_t row = 0;
  for (auto c : classes)
    for (const auto& x : e.staged[c]) {
      batch.features.row(static_cast<Eigen::Index>(row++)) = x.transpose();
      batch.labels.push_back(c);
    }

  const TrainEvent ev = e.session.train_on_batch(batch, tag);
  for (auto c : classes) e.staged[c].clear();
  return ok(200, event_json(ev));
}

ApiResponse SessionService::predict(Entry& e, const std::string& body) {
  const json req = parse_body(body);
  only_keys(req, {"features", "image"}, "request");
  const VectorF x = features_from(req, e.session.dim(), options_.image_seed);
  const auto p = e.session.predict(x);
  json probs = json::array();
  for (Eigen::Index i = 0; i < p.probs.size(); ++i) probs.push_back(p.probs[i]);
  return ok(200, json{{"label", p.label}, {"probs", probs}});
}

ApiResponse SessionService::reset(Entry& e) {
  e.session.reset();
  for (auto& s : e.staged) s.clear();
  return ok(200, json{{"ok", true}});
}

ApiResponse SessionService::state(Entry& e) {
  json history = json::array();
  for (const auto& ev : e.session.history()) history.push_back(event_json(ev));
  json j{{"id", e.id},
         {"mode", to_string(e.session.mode())},
         {"config", e.config},
         {"history", history},
         {"staged_counts", staged_counts(e.staged)}};
  if (e.session.buffer())
    j["buffer"] = {{"occupancy", e.session.buffer()->size()},
                   {"histogram", histogram_json(e.session.buffer()->class_histogram())}};
  return ok(200, j);
}

void SessionService::register_routes(httplib::Server& server) {
  const std::string origin = options_.cors_origin;
  server.set_default_headers({{"Access-Control-Allow-Origin", origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    const ApiResponse r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server.Post(R"(/sessions(/.*)?)", dispatch);
  server.Get(R"(/sessions(/.*)?)", dispatch);
  server.Options(R"(/sessions(/.*)?)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

bool serve(SessionService& service, const std::string& host, int port,
           const std::optional<std::filesystem::path>& static_dir, const std::function<void(int)>& on_bound,
           std::function<void(std::function<void()>)> install_stop) {
  httplib::Server server;
  // httplib's default adds SO_REUSEPORT, which lets a second server share a busy port
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
  });
  service.register_routes(server);
  if (static_dir && !server.set_mount_point("/", static_dir->string())) return false;
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) return false;
  if (install_stop) install_stop([&server] { server.stop(); });
  if (on_bound) on_bound(bound);
  return server.listen_after_bind();
}

}  // namespace edgecl
