#include <fstream>
#include <iterator>
#include <thread>

#include <httplib.h>

#include "qgan/mos.hpp"

namespace qgan::mos {

using nlohmann::json;

struct HttpService::Impl {
  Store& store;
  httplib::Server server;
  std::thread thread;

  explicit Impl(Store& s) : store(s) { routes(); }

  static void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <typename F>
  static auto guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send(res, e.status, {{"error", e.what()}});
      } catch (const json::exception& e) {
        send(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
      } catch (const std::exception& e) {
        send(res, 500, {{"error", e.what()}});
      }
    };
  }

  static json body(const httplib::Request& req) {
    json j = json::parse(req.body.empty() ? "{}" : req.body);
    if (!j.is_object()) throw Error(400, "request body must be a JSON object");
    return j;
  }

  void routes() {
    server.Post("/studies", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json j = body(req);
      if (!j.contains("images") || !j["images"].is_array()) throw Error(400, "images must be an array");
      std::vector<ImageEntry> images;
      for (const auto& im : j["images"]) {
        if (!im.is_object() || !im.contains("id") || !im.contains("method") || !im.contains("task"))
          throw Error(400, "each image needs id, method and task");
        images.push_back({im["id"], im["method"], im["task"], im.value("path", std::string())});
      }
      const Study s = store.add_study(std::move(images), j.value("probe_fraction", 0.1), j.value("seed", 0ULL));
      send(res, 201, {{"study", s.id}, {"images", s.images.size()}, {"items_per_session", s.images.size() + s.probes.size()}});
    }));
    server.Post(R"(/studies/([^/]+)/sessions)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json j = body(req);
      const Session s = store.add_session(req.matches[1], j.value("rater", std::string()));
      send(res, 201, next_payload(s));
    }));
    server.Get(R"(/sessions/([^/]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, 200, next_payload(store.session(req.matches[1])));
    }));
    server.Get(R"(/sessions/([^/]+)/items/(\d+)/image)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const std::string path = store.image_path(req.matches[1], std::stoul(req.matches[2]));
                 std::ifstream in(path, std::ios::binary);
                 if (!in) throw Error(404, "image file unavailable");
                 const std::string bytes{std::istreambuf_iterator<char>(in), {}};
                 const bool png = path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0;
                 res.set_content(bytes, png ? "image/png" : "application/octet-stream");
               }));
    server.Post(R"(/sessions/([^/]+)/ratings)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json j = body(req);
      if (!j.contains("item") || !j["item"].is_number_unsigned()) throw Error(400, "item must be a non-negative integer");
      if (!j.contains("score") || !j["score"].is_number_integer()) throw Error(422, "score must be an integer in 1..5");
      const Session s = store.rate(req.matches[1], j["item"].get<std::size_t>(), j["score"].get<int>());
      send(res, 200, next_payload(s));
    }));
    server.Get(R"(/studies/([^/]+)/report)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, 200, to_json(store.report(req.matches[1])));
    }));
  }
};

HttpService::HttpService(Store& store) : impl_(std::make_unique<Impl>(store)) {}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpService::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace qgan::mos
