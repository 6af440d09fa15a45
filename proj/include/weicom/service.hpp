#pragma once

#include <algorithm>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "weicom/benchmark.hpp"
#include "weicom/embedding_store.hpp"
#include "weicom/error.hpp"
#include "weicom/fusion.hpp"

namespace weicom {

struct ServiceConfig {
  std::optional<fs::path> images_dir;
  std::vector<AttributeSpec> benchmark;  // groups /v1/vocabulary when present
  std::string cors_origin;               // empty: no CORS headers
};

struct JsonResponse {
  int status = 200;
  json body;
};

struct BinaryResponse {
  int status = 200;
  std::string content_type;
  std::string bytes;
};

inline JsonResponse error_response(int status, std::string_view code, const std::string& message) {
  return {status, json{{"error", {{"code", code}, {"message", message}}}}};
}

/// Read-only JSON API over one loaded corpus. Handlers are callable directly
/// (tests) or through install() on an httplib server. Until set_corpus() is
/// called every endpoint answers 503.
class Service {
 public:
  explicit Service(ServiceConfig config = {}) : config_(std::move(config)) {}

  void set_corpus(std::shared_ptr<const Corpus> corpus) {
    std::lock_guard lock(mutex_);
    corpus_ = std::move(corpus);
  }

  std::shared_ptr<const Corpus> corpus() const {
    std::lock_guard lock(mutex_);
    return corpus_;
  }

  JsonResponse health() const {
    auto c = corpus();
    if (!c) return error_response(503, "Loading", "corpus is still loading");
    return {200, json{{"status", "ok"}, {"corpus", {{"count", c->count()}, {"dim", c->dim()}}}}};
  }

  JsonResponse vocabulary() const {
    auto c = corpus();
    if (!c) return error_response(503, "Loading", "corpus is still loading");
    std::vector<std::string> texts = c->texts().texts();
    std::sort(texts.begin(), texts.end());
    json groups = json::array();
    for (const auto& [attribute, values] : vocabulary_groups(config_.benchmark)) {
      json known = json::array();
      for (const auto& v : values)
        if (c->texts().find(v)) known.push_back(v);
      if (!known.empty()) groups.push_back({{"attribute", attribute}, {"values", known}});
    }
    return {200, json{{"texts", texts}, {"groups", groups}, {"embedding_adapter", false}}};
  }

  JsonResponse retrieve(std::string_view body) const {
    auto c = corpus();
    if (!c) return error_response(503, "Loading", "corpus is still loading");
    json req;
    try {
      req = json::parse(body);
    } catch (const json::parse_error& e) {
      return error_response(400, "BadRequest", std::string("invalid JSON: ") + e.what());
    }
    if (!req.is_object()) return error_response(400, "BadRequest", "request body must be a JSON object");

    try {
      return run_retrieve(*c, req);
    } catch (const Error& e) {
      const int status = e.code() == ErrorCode::DimMismatch ? 422 : 400;
      return error_response(status, to_string(e.code()), e.what());
    } catch (const json::exception& e) {
      return error_response(400, "BadRequest", e.what());
    }
  }

  BinaryResponse image(std::string_view id) const {
    auto c = corpus();
    if (!c) return {503, "text/plain", "corpus is still loading"};
    if (!config_.images_dir) return {501, "text/plain", "no images directory configured"};
    if (!c->find_id(id)) return {404, "text/plain", "unknown image id"};
    if (id.find('/') != std::string_view::npos || id.find('\\') != std::string_view::npos || id == "." || id == "..")
      return {404, "text/plain", "unknown image id"};

    static constexpr std::pair<const char*, const char*> kTypes[] = {
        {".png", "image/png"},   {".jpg", "image/jpeg"}, {".jpeg", "image/jpeg"}, {".tif", "image/tiff"},
        {".tiff", "image/tiff"}, {".webp", "image/webp"}, {".gif", "image/gif"}};
    const std::string name(id);
    for (const auto& [ext, type] : kTypes) {
      const fs::path candidate = *config_.images_dir / (name + ext);
      std::error_code ec;
      if (fs::is_regular_file(candidate, ec)) return {200, type, detail::read_file(candidate)};
    }
    // Ids that already carry their extension.
    const fs::path direct = *config_.images_dir / name;
    std::error_code ec;
    if (fs::is_regular_file(direct, ec)) {
      const std::string ext = to_lower(direct.extension().string());
      for (const auto& [known, type] : kTypes)
        if (ext == known) return {200, type, detail::read_file(direct)};
      return {200, "application/octet-stream", detail::read_file(direct)};
    }
    return {404, "text/plain", "no image file for id"};
  }

  void install(httplib::Server& server) const {
    auto send = [](httplib::Response& res, const JsonResponse& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server.Get("/v1/vocabulary", [this, send](const httplib::Request&, httplib::Response& res) { send(res, vocabulary()); });
    server.Post("/v1/retrieve",
                [this, send](const httplib::Request& req, httplib::Response& res) { send(res, retrieve(req.body)); });
    server.Get(R"(/v1/image/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto r = image(req.matches[1].str());
      res.status = r.status;
      res.set_content(std::move(r.bytes), r.content_type);
    });
    if (!config_.cors_origin.empty()) {
      const std::string origin = config_.cors_origin;
      server.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
      });
      server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    }
  }

 private:
  static std::vector<float> embedding_field(const json& v, const char* name) {
    if (!v.is_array() || v.empty()) throw Error(ErrorCode::InvalidArgument, std::string(name) + " must be a non-empty array");
    std::vector<float> out;
    out.reserve(v.size());
    for (const auto& x : v) {
      if (!x.is_number()) throw Error(ErrorCode::InvalidArgument, std::string(name) + " must contain numbers");
      out.push_back(x.get<float>());
    }
    return out;
  }

  static std::vector<float> client_embedding(const Corpus& corpus, const json& v, const char* name) {
    auto e = embedding_field(v, name);
    if (e.size() != corpus.dim())
      throw Error(ErrorCode::DimMismatch, std::string(name) + " has dim " + std::to_string(e.size()) + ", corpus dim is " +
                                              std::to_string(corpus.dim()));
    return l2_normalize(e);
  }

  static bool present(const json& req, const char* key) { return req.contains(key) && !req[key].is_null(); }

  JsonResponse run_retrieve(const Corpus& corpus, const json& req) const {
    const MethodKind kind = parse_method_kind(req.value("method", std::string("weicom")));
    double lambda = 0.5;
    if (present(req, "lambda")) {
      if (!req["lambda"].is_number()) throw Error(ErrorCode::InvalidArgument, "lambda must be a number");
      lambda = req["lambda"].get<double>();
    }
    check_lambda(lambda);
    Method method = kind == MethodKind::WeiCom ? Method::weicom(lambda) : Method{kind, lambda};

    std::size_t k = 50;
    if (present(req, "k")) {
      if (!req["k"].is_number_integer() || req["k"].get<long long>() < 1)
        throw Error(ErrorCode::InvalidArgument, "k must be a positive integer");
      k = req["k"].get<std::size_t>();
    }
    bool exclude = false;
    if (present(req, "exclude_query_image")) {
      if (!req["exclude_query_image"].is_boolean())
        throw Error(ErrorCode::InvalidArgument, "exclude_query_image must be a boolean");
      exclude = req["exclude_query_image"].get<bool>();
    }

    ComposedQuery q;
    const bool has_id = present(req, "query_image_id");
    const bool has_image_vec = present(req, "query_image_embedding");
    if (has_id && has_image_vec)
      throw Error(ErrorCode::InvalidArgument, "give query_image_id or query_image_embedding, not both");
    if (method.needs_image() && !has_id && !has_image_vec)
      throw Error(ErrorCode::InvalidArgument, "method needs query_image_id or query_image_embedding");
    if (has_id) {
      if (!req["query_image_id"].is_string()) throw Error(ErrorCode::InvalidArgument, "query_image_id must be a string");
      const std::string id = req["query_image_id"];
      const auto row = corpus.row_of(id);
      const auto e = corpus.images().row(row);
      q.image_embedding.assign(e.begin(), e.end());
      q.query_image_id = id;
    } else if (has_image_vec) {
      q.image_embedding = client_embedding(corpus, req["query_image_embedding"], "query_image_embedding");
    }

    const bool has_text = present(req, "query_text");
    const bool has_text_vec = present(req, "query_text_embedding");
    if (has_text && has_text_vec) throw Error(ErrorCode::InvalidArgument, "give query_text or query_text_embedding, not both");
    if (method.needs_text() && !has_text && !has_text_vec)
      throw Error(ErrorCode::InvalidArgument, "method needs query_text or query_text_embedding");
    if (has_text) {
      if (!req["query_text"].is_string()) throw Error(ErrorCode::InvalidArgument, "query_text must be a string");
      const auto e = get_text_embedding(corpus, req["query_text"].get<std::string>());
      q.text_embedding.assign(e.begin(), e.end());
    } else if (has_text_vec) {
      q.text_embedding = client_embedding(corpus, req["query_text_embedding"], "query_text_embedding");
    }

    const bool effective_exclude = exclude && q.query_image_id.has_value();
    const auto ranked = weicom::retrieve(q, corpus, method, k, effective_exclude);

    json results = json::array();
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      const auto& rec = corpus.record(ranked[i].row);
      results.push_back({{"rank", i + 1},
                         {"id", ranked[i].id},
                         {"score", ranked[i].score},
                         {"class", rec.class_name},
                         {"attributes", rec.attributes}});
    }
    json out{{"results", results},
             {"method", method_name(method.kind)},
             {"lambda", method.kind == MethodKind::WeiCom ? json(method.lambda) : json(nullptr)},
             {"k", k},
             {"exclude_query_image", effective_exclude}};
    return {200, std::move(out)};
  }

  ServiceConfig config_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Corpus> corpus_;
};

}  // namespace weicom
