// SPDX-License-Identifier: Apache-2.0
#include "opal/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <list>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "opal/error.hpp"

namespace opal::service {

using json = nlohmann::json;

namespace {

struct Session {
  std::mutex mutex;
  pipeline::GenerationRequest request;
  pipeline::LayoutResult state;
};

Response json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }
Response error_response(int status, const std::string& reason) {
  return json_response(status, {{"error", reason}});
}

/// Thrown for requests that do not parse; mapped to 400.
struct BadRequest : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw BadRequest("request body is not valid JSON");
  if (!j.is_object()) throw BadRequest("request body must be a JSON object");
  return j;
}

std::string session_field(const json& j) {
  if (!j.contains("session_id") || !j.at("session_id").is_string()) {
    throw BadRequest("request needs a string session_id");
  }
  return j.at("session_id").get<std::string>();
}

std::uint64_t seed_field(const json& j, std::uint64_t fallback) {
  if (!j.contains("seed")) return fallback;
  const json& s = j.at("seed");
  if (!s.is_number_unsigned()) throw ValidationError("seed must be a nonnegative integer");
  return s.get<std::uint64_t>();
}

}  // namespace

struct LayoutService::Impl {
  std::shared_ptr<const pipeline::ModelBundle> models;
  ServiceOptions options;

  mutable std::mutex store_mutex;
  mutable std::list<std::string> recency;  // front is most recent
  mutable std::unordered_map<std::string,
                             std::pair<std::shared_ptr<Session>, std::list<std::string>::iterator>>
      sessions;
  mutable std::uint64_t next_session = 0;

  httplib::Server server;
  std::thread worker;

  std::shared_ptr<Session> find(const std::string& id) const {
    std::lock_guard lock(store_mutex);
    const auto it = sessions.find(id);
    if (it == sessions.end()) return nullptr;
    recency.splice(recency.begin(), recency, it->second.second);
    return it->second.first;
  }

  std::string insert(std::shared_ptr<Session> s) const {
    std::lock_guard lock(store_mutex);
    char id[17];
    std::snprintf(id, sizeof(id), "%016llx",
                  static_cast<unsigned long long>(derive_seed(options.session_salt, next_session++)));
    recency.push_front(id);
    sessions[id] = {std::move(s), recency.begin()};
    while (sessions.size() > options.session_capacity) {
      sessions.erase(recency.back());
      recency.pop_back();
    }
    return id;
  }

  json session_json(const std::string& id, const Session& s) const {
    return {{"session_id", id},
            {"request", s.request.to_json(models->schemas())},
            {"layout", s.state.summary(models->schemas())},
            {"layout_png", "/layout/" + id + ".png"}};
  }

  Response generate(const std::string& body) const {
    const json j = parse_body(body);
    auto s = std::make_shared<Session>();
    s->request = pipeline::GenerationRequest::from_json(j, models->schemas());
    s->state = pipeline::generate_layout(s->request, *models);
    const std::string id = insert(s);
    std::lock_guard lock(s->mutex);
    return json_response(200, session_json(id, *s));
  }

  Response edit(const std::string& body) const {
    const json j = parse_body(body);
    const std::string id = session_field(j);
    auto s = find(id);
    if (!s) return error_response(404, "unknown session " + id);
    std::lock_guard lock(s->mutex);
    const dataset::PartSchema& schema = models->schemas().by_id(s->request.category_id);
    std::vector<pipeline::EditCommand> edits;
    if (j.contains("edits")) {
      if (!j.at("edits").is_array()) throw BadRequest("edits must be an array");
      for (const json& e : j.at("edits")) edits.push_back(pipeline::EditCommand::from_json(e, schema));
    }
    pipeline::GenerationRequest req = s->request;
    req.seed = seed_field(j, req.seed);
    pipeline::LayoutResult next = pipeline::edit_and_regenerate(s->state.boxes(), edits, req, *models);
    req.parts.clear();
    for (const auto& [k, b] : next.boxes()) req.parts.push_back(k);
    req.fixed_boxes.clear();
    s->request = std::move(req);
    s->state = std::move(next);
    return json_response(200, session_json(id, *s));
  }

  Response add_part(const std::string& body) const {
    const json j = parse_body(body);
    const std::string id = session_field(j);
    auto s = find(id);
    if (!s) return error_response(404, "unknown session " + id);
    std::lock_guard lock(s->mutex);
    const dataset::PartSchema& schema = models->schemas().by_id(s->request.category_id);
    if (!j.contains("part")) throw BadRequest("request needs a part");
    int k = -1;
    if (j.at("part").is_string()) {
      k = schema.part_index(j.at("part").get<std::string>());
      if (k < 0) throw ValidationError("unknown part '" + j.at("part").get<std::string>() + "'");
    } else if (j.at("part").is_number_integer()) {
      k = j.at("part").get<int>();
    } else {
      throw BadRequest("part must be a name or an index");
    }
    const std::uint64_t seed = seed_field(j, s->request.seed);
    pipeline::LayoutResult next = pipeline::add_part(s->state, k, *models, seed);
    s->request.parts.clear();
    for (const auto& [part, b] : next.boxes()) s->request.parts.push_back(part);
    s->request.fixed_boxes.clear();
    s->state = std::move(next);
    return json_response(200, session_json(id, *s));
  }

  Response get_session(const std::string& id) const {
    auto s = find(id);
    if (!s) return error_response(404, "unknown session " + id);
    std::lock_guard lock(s->mutex);
    return json_response(200, session_json(id, *s));
  }

  Response layout_png(const std::string& id) const {
    auto s = find(id);
    if (!s) return error_response(404, "unknown session " + id);
    std::lock_guard lock(s->mutex);
    const std::vector<std::uint8_t> png = s->state.layout.png();
    return {200, "image/png", std::string(png.begin(), png.end())};
  }

  Response route(const std::string& method, const std::string& path, const std::string& body) const {
    if (method == "GET" && path == "/health") return {200, "text/plain", "ok"};
    if (method == "GET" && path == "/schema") return json_response(200, models->schemas().to_json());
    if (method == "POST" && path == "/generate") return generate(body);
    if (method == "POST" && path == "/edit") return edit(body);
    if (method == "POST" && path == "/addpart") return add_part(body);
    const std::string session_prefix = "/session/";
    if (method == "GET" && path.rfind(session_prefix, 0) == 0) {
      return get_session(path.substr(session_prefix.size()));
    }
    const std::string layout_prefix = "/layout/";
    const std::string png_suffix = ".png";
    if (method == "GET" && path.rfind(layout_prefix, 0) == 0 && path.size() > layout_prefix.size() + png_suffix.size() &&
        path.compare(path.size() - png_suffix.size(), png_suffix.size(), png_suffix) == 0) {
      return layout_png(path.substr(layout_prefix.size(),
                                    path.size() - layout_prefix.size() - png_suffix.size()));
    }
    return error_response(404, "no route for " + method + " " + path);
  }
};

LayoutService::LayoutService(std::shared_ptr<const pipeline::ModelBundle> models, ServiceOptions options)
    : impl_(std::make_unique<Impl>()) {
  require(models != nullptr, "LayoutService needs models");
  require(options.session_capacity > 0, "session capacity must be positive");
  impl_->models = std::move(models);
  impl_->options = options;

  const std::size_t threads = std::max<std::size_t>(1, options.worker_threads);
  impl_->server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    const Response r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
    res.set_header("Access-Control-Allow-Origin", "*");
  };
  impl_->server.Get(R"(/.*)", forward);
  impl_->server.Post(R"(/.*)", forward);
  impl_->server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
}

LayoutService::~LayoutService() { stop(); }

Response LayoutService::handle(const std::string& method, const std::string& path, const std::string& body) const {
  try {
    return impl_->route(method, path, body);
  } catch (const BadRequest& e) {
    return error_response(400, e.what());
  } catch (const ValidationError& e) {
    return error_response(422, e.what());
  } catch (const DegenerateError& e) {
    return error_response(422, e.what());
  } catch (const json::exception& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    spdlog::error("{} {} failed: {}", method, path, e.what());
    return error_response(500, e.what());
  }
}

std::size_t LayoutService::session_count() const {
  std::lock_guard lock(impl_->store_mutex);
  return impl_->sessions.size();
}

const ServiceOptions& LayoutService::options() const { return impl_->options; }

bool LayoutService::listen() {
  spdlog::info("serving on {}:{}", impl_->options.host, impl_->options.port);
  return impl_->server.listen(impl_->options.host, impl_->options.port);
}

int LayoutService::start_background() {
  const int port = impl_->server.bind_to_any_port(impl_->options.host);
  if (port < 0) return -1;
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void LayoutService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace opal::service
