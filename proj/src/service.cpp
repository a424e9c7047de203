#include "dermnet/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "dermnet/checksum.hpp"
#include "dermnet/dataset.hpp"
#include "dermnet/errors.hpp"
#include "dermnet/labels.hpp"
#include "dermnet/weights_io.hpp"

namespace dermnet {

using json = nlohmann::ordered_json;

PredictionResult rank_probabilities(std::span<const float> probabilities, std::string model_id,
                                    std::string image_sha256) {
  std::vector<std::size_t> order(probabilities.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probabilities[a] > probabilities[b]; });
  PredictionResult r;
  const bool canonical = probabilities.size() == kNumClasses;
  for (std::size_t i : order) {
    RankedClass c;
    c.index = static_cast<int>(i);
    c.code = canonical ? std::string(kClassLabels[i].code) : "class_" + std::to_string(i);
    c.name = canonical ? std::string(kClassLabels[i].name) : "Class " + std::to_string(i);
    c.probability = probabilities[i];
    r.predictions.push_back(std::move(c));
  }
  r.top3.assign(r.predictions.begin(), r.predictions.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(3, r.predictions.size())));
  r.model = std::move(model_id);
  r.image_sha256 = std::move(image_sha256);
  return r;
}

PredictionResult predict_image_bytes(const ModelGraph& model, std::string_view model_id,
                                     std::span<const std::uint8_t> bytes) {
  const Image decoded = decode_image(bytes);
  const std::size_t s = model.config().input_size;
  const Image resized = resize_bilinear(decoded, s, s);
  const Tensor probs = predict(model, preprocess_pixels(resized));
  return rank_probabilities(probs.data(), std::string(model_id), sha256_hex(bytes));
}

namespace {

json ranked_json(const std::vector<RankedClass>& list) {
  json arr = json::array();
  for (const auto& c : list) arr.push_back({{"code", c.code}, {"name", c.name}, {"probability", c.probability}});
  return arr;
}

}  // namespace

std::string prediction_to_json(const PredictionResult& result) {
  json j;
  j["predictions"] = ranked_json(result.predictions);
  j["top3"] = ranked_json(result.top3);
  j["model"] = result.model;
  j["image_sha256"] = result.image_sha256;
  return j.dump();
}

HttpResponse error_response(int status, std::string_view code, std::string_view message) {
  return {status, json{{"error", message}, {"code", code}}.dump(), "application/json"};
}

struct InferenceService::Server {
  httplib::Server http;
};

InferenceService::InferenceService(ServiceConfig config) : config_(std::move(config)) {}

InferenceService::~InferenceService() { stop(); }

void InferenceService::load_model(const std::filesystem::path& weights, const ModelConfig& base) {
  const auto bytes = read_file_bytes(weights);
  ModelConfig config = infer_config(bytes, base);
  set_model(deserialize_weights(bytes, config), sha256_hex(bytes));
}

void InferenceService::set_model(ModelGraph model, std::string weight_checksum) {
  model_ = std::make_shared<const ModelGraph>(std::move(model));
  checksum_ = std::move(weight_checksum);
}

std::string InferenceService::model_id() const {
  if (!model_) return {};
  return "mobilenet-v1-" + std::to_string(model_->config().num_classes) + "way@" + checksum_.substr(0, 12);
}

HttpResponse InferenceService::handle_health() const { return {200, json{{"status", "ok"}}.dump(), "application/json"}; }

HttpResponse InferenceService::handle_model() const {
  if (!model_) return error_response(503, "model_not_loaded", "model not loaded");
  json classes = json::array();
  const std::size_t k = model_->config().num_classes;
  for (std::size_t i = 0; i < k; ++i) {
    if (k == kNumClasses) {
      classes.push_back({{"code", kClassLabels[i].code}, {"name", kClassLabels[i].name}});
    } else {
      classes.push_back({{"code", "class_" + std::to_string(i)}, {"name", "Class " + std::to_string(i)}});
    }
  }
  json j;
  j["classes"] = std::move(classes);
  j["input_size"] = model_->config().input_size;
  j["weight_file_checksum"] = checksum_;
  j["model"] = model_id();
  return {200, j.dump(), "application/json"};
}

HttpResponse InferenceService::handle_predict(std::span<const std::uint8_t> body, std::string_view) const {
  const auto model = model_;
  if (!model) return error_response(503, "model_not_loaded", "model not loaded");
  if (body.size() > config_.max_upload_bytes) return error_response(413, "payload_too_large", "payload too large");
  PredictionResult result;
  try {
    result = predict_image_bytes(*model, model_id(), body);
  } catch (const ImageDecodeError&) {
    return error_response(400, "undecodable_image", "undecodable image");
  }
  if (!config_.audit_log.empty()) {
    std::lock_guard lock(audit_mutex_);
    std::ofstream log(config_.audit_log, std::ios::app);
    log << json{{"image_sha256", result.image_sha256},
                {"model", result.model},
                {"top_class", result.predictions.front().code},
                {"probability", result.predictions.front().probability}}
               .dump()
        << '\n';
  }
  return {200, prediction_to_json(result), "application/json"};
}

std::string InferenceService::allowed_origin(std::string_view origin) const {
  for (const auto& o : config_.cors_origins) {
    if (o == "*") return "*";
    if (!origin.empty() && o == origin) return std::string(origin);
  }
  return {};
}

int InferenceService::bind(const std::string& host, int port) {
  server_ = std::make_unique<Server>();
  auto& http = server_->http;
  // Allow a little headroom so oversize bodies reach handle_predict and get
  // the JSON error; anything larger is cut off by httplib itself.
  http.set_payload_max_length(config_.max_upload_bytes + 1);

  auto send = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  auto cors = [this](const httplib::Request& req, httplib::Response& res) {
    const std::string allowed = allowed_origin(req.get_header_value("Origin"));
    if (!allowed.empty()) {
      res.set_header("Access-Control-Allow-Origin", allowed);
      if (allowed != "*") res.set_header("Vary", "Origin");
    }
  };

  http.Get("/v1/health", [this, send, cors](const httplib::Request& req, httplib::Response& res) {
    cors(req, res);
    send(res, handle_health());
  });
  http.Get("/v1/model", [this, send, cors](const httplib::Request& req, httplib::Response& res) {
    cors(req, res);
    send(res, handle_model());
  });
  http.Post("/v1/predict", [this, send, cors](const httplib::Request& req, httplib::Response& res) {
    cors(req, res);
    const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
    send(res, handle_predict({data, req.body.size()}, req.get_header_value("Content-Type")));
  });
  http.Options(R"(/v1/.*)", [this, cors](const httplib::Request& req, httplib::Response& res) {
    cors(req, res);
    res.status = 204;
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Max-Age", "600");
  });
  http.set_error_handler([send, cors](const httplib::Request& req, httplib::Response& res) {
    cors(req, res);
    if (res.status == 413) {
      send(res, error_response(413, "payload_too_large", "payload too large"));
    } else if (res.status == 404) {
      send(res, error_response(404, "not_found", "no such endpoint"));
    } else if (res.body.empty()) {
      send(res, error_response(res.status, "http_error", httplib::status_message(res.status)));
    }
  });

  if (port == 0) {
    const int bound = http.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!http.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void InferenceService::listen() {
  if (!server_) throw Error("listen() called before bind()");
  server_->http.listen_after_bind();
}

void InferenceService::stop() {
  if (server_) server_->http.stop();
}

bool InferenceService::running() const { return server_ && server_->http.is_running(); }

}  // namespace dermnet
