#pragma once

// Serves any Provider over the JSON/HTTP wire protocol. Used to expose the
// mock provider to out-of-process clients and to test HttpProvider end to end.

#include <memory>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "ragcap/error.hpp"
#include "ragcap/provider_gateway.hpp"

namespace ragcap {

class ProviderServer {
 public:
  explicit ProviderServer(std::shared_ptr<Provider> provider) : provider_(std::move(provider)) { routes(); }

  ~ProviderServer() { stop(); }

  ProviderServer(const ProviderServer&) = delete;
  ProviderServer& operator=(const ProviderServer&) = delete;

  // Binds an ephemeral port on `host` and serves on a background thread.
  int start(const std::string& host = "127.0.0.1") {
    port_ = server_.bind_to_any_port(host);
    if (port_ < 0) throw Error(ErrorKind::internal, "cannot bind provider server");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Blocks serving on host:port.
  void listen(const std::string& host, int port) {
    port_ = port;
    if (!server_.listen(host, port)) throw Error(ErrorKind::internal, "cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  template <typename Fn>
  static void handle(httplib::Response& res, Fn&& fn) {
    try {
      res.set_content(fn().dump(), "application/json");
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const ProviderError& e) {
      res.status = e.retryable() ? 503 : 422;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const InputError& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  void routes() {
    server_.Get("/v1/manifest", [this](const httplib::Request&, httplib::Response& res) {
      handle(res, [&] {
        const auto m = provider_->manifest();
        return nlohmann::ordered_json{{"provider_id", m.provider_id},
                                      {"embedding_dimension", m.embedding_dimension},
                                      {"eos_token", m.eos_token}};
      });
    });
    server_.Post("/v1/embed_text", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const auto body = nlohmann::json::parse(req.body);
        const auto texts = body.at("texts").get<std::vector<std::string>>();
        return nlohmann::ordered_json{{"embeddings", provider_->embed_texts(texts)}};
      });
    });
    server_.Post("/v1/embed_image", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const auto body = nlohmann::json::parse(req.body);
        const auto bytes = base64_decode(body.at("image_b64").get<std::string>());
        return nlohmann::ordered_json{{"embedding", provider_->embed_image(bytes)}};
      });
    });
    server_.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const auto body = nlohmann::json::parse(req.body);
        GenerationRequest g;
        g.prompt = body.at("prompt").get<std::string>();
        g.num_candidates = body.at("num_candidates").get<std::size_t>();
        g.beam_size = body.at("beam_size").get<std::size_t>();
        g.max_new_tokens = body.at("max_new_tokens").get<std::size_t>();
        g.stop = body.at("stop").get<std::string>();
        const auto r = provider_->generate(g);
        nlohmann::ordered_json out;
        out["candidates"] = nlohmann::ordered_json::array();
        for (const auto& c : r.candidates) out["candidates"].push_back({{"text", c.text}, {"score", c.score}});
        if (r.echo) out["echo"] = *r.echo;
        return out;
      });
    });
  }

  std::shared_ptr<Provider> provider_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace ragcap
