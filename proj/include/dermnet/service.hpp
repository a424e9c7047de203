#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dermnet/image.hpp"
#include "dermnet/model.hpp"

namespace dermnet {

struct RankedClass {
  int index = 0;
  std::string code;
  std::string name;
  double probability = 0.0;
};

struct PredictionResult {
  std::vector<RankedClass> predictions;  // descending probability, lower index first on ties
  std::vector<RankedClass> top3;
  std::string model;
  std::string image_sha256;
};

/// Orders a probability row; codes and names come from the canonical labels
/// when there are 7 classes.
PredictionResult rank_probabilities(std::span<const float> probabilities, std::string model_id,
                                    std::string image_sha256);

/// Decode, resize to the model input, scale to [-1, 1], inference forward.
/// Throws ImageDecodeError for bytes that are not a PNG or JPEG image.
PredictionResult predict_image_bytes(const ModelGraph& model, std::string_view model_id,
                                     std::span<const std::uint8_t> bytes);

std::string prediction_to_json(const PredictionResult& result);

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::size_t max_upload_bytes = 8u << 20;
  /// "*" allows any origin.
  std::vector<std::string> cors_origins{"*"};
  /// Empty disables the append-only audit log.
  std::filesystem::path audit_log;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Request handling for the inference API. Handlers are const and the model
/// is never mutated after load, so concurrent requests share it freely.
class InferenceService {
 public:
  explicit InferenceService(ServiceConfig config);
  ~InferenceService();
  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  void load_model(const std::filesystem::path& weights, const ModelConfig& base = {});
  void set_model(ModelGraph model, std::string weight_checksum);
  bool has_model() const noexcept { return model_ != nullptr; }
  const ServiceConfig& config() const noexcept { return config_; }
  std::string model_id() const;

  HttpResponse handle_health() const;
  HttpResponse handle_model() const;
  HttpResponse handle_predict(std::span<const std::uint8_t> body, std::string_view content_type) const;

  /// Value for Access-Control-Allow-Origin, or empty when not allowed.
  std::string allowed_origin(std::string_view origin) const;

  /// Binds the listening socket; port 0 picks an ephemeral port. Returns the
  /// bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Requires bind().
  void listen();
  void stop();
  bool running() const;

 private:
  struct Server;

  ServiceConfig config_;
  std::shared_ptr<const ModelGraph> model_;
  std::string checksum_;
  std::unique_ptr<Server> server_;
  mutable std::mutex audit_mutex_;
};

HttpResponse error_response(int status, std::string_view code, std::string_view message);

}  // namespace dermnet
