#include "dermnet/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <ostream>

#include "dermnet/augment.hpp"
#include "dermnet/checksum.hpp"
#include "dermnet/csv.hpp"
#include "dermnet/dataset.hpp"
#include "dermnet/errors.hpp"
#include "dermnet/labels.hpp"
#include "dermnet/metrics.hpp"
#include "dermnet/service.hpp"
#include "dermnet/train.hpp"
#include "dermnet/weights_io.hpp"

namespace dermnet {

namespace fs = std::filesystem;

namespace {

struct ModelOptions {
  std::size_t input_size = 224;
  double width = 1.0;
  std::size_t blocks = 13;
  float dropout = 0.2f;
  std::string activation = "relu6";

  void add(CLI::App* cmd) {
    cmd->add_option("--input-size", input_size, "Model input edge in pixels")->capture_default_str();
    cmd->add_option("--width", width, "Width multiplier for a freshly built backbone")->capture_default_str();
    cmd->add_option("--blocks", blocks, "Depthwise-separable block count")->capture_default_str();
    cmd->add_option("--dropout", dropout, "Head dropout rate")->capture_default_str();
    cmd->add_option("--activation", activation, "relu6 or relu")
        ->check(CLI::IsMember({"relu6", "relu"}))
        ->capture_default_str();
  }

  ModelConfig config() const {
    ModelConfig c;
    c.input_size = input_size;
    c.width_multiplier = width;
    c.num_blocks = blocks;
    c.dropout_rate = dropout;
    c.activation = activation == "relu" ? Activation::relu : Activation::relu6;
    return c;
  }
};

/// Weight files carry shapes but not input size, dropout or activation.
ModelGraph load_model_file(const fs::path& path, const ModelOptions& opts, std::string* checksum = nullptr) {
  const auto bytes = read_file_bytes(path);
  if (checksum) *checksum = sha256_hex(bytes);
  return deserialize_weights(bytes, infer_config(bytes, opts.config()));
}

Tensor load_model_input(const fs::path& root, const std::string& image_id, std::size_t size) {
  const auto path = find_image_file(root, image_id);
  if (!path) throw Error("image not found for " + image_id + " under " + root.string());
  Image img = read_image(*path);
  if (img.width != size || img.height != size) img = resize_bilinear(img, size, size);
  return preprocess_pixels(img);
}

struct ImageList {
  std::vector<std::pair<fs::path, std::string>> items;  // (root, image_id)
  std::vector<int> labels;
};

FeatureSet features_for(const ModelGraph& model, const ImageList& list, std::ostream& out, const char* what) {
  out << "extracting " << what << " features for " << list.items.size() << " images\n";
  const std::size_t size = model.config().input_size;
  return extract_feature_set(
      model, list.items.size(),
      [&](std::size_t i) { return load_model_input(list.items[i].first, list.items[i].second, size); }, list.labels);
}

ImageList images_in(const DatasetIndex& index, Split which, const fs::path& root) {
  ImageList list;
  for (std::size_t i = 0; i < index.records.size(); ++i) {
    if (index.split[i] != which) continue;
    list.items.emplace_back(root, index.records[i].image_id);
    list.labels.push_back(index.records[i].dx);
  }
  return list;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

std::vector<std::string> class_codes(std::size_t k) {
  std::vector<std::string> codes;
  for (std::size_t i = 0; i < k; ++i) {
    codes.push_back(k == kNumClasses ? std::string(kClassLabels[i].code) : "class_" + std::to_string(i));
  }
  return codes;
}

void emit_evaluation(const EvaluationResult& r, const fs::path& out_dir, std::ostream& out) {
  const std::string text = format_report(r.report);
  const auto codes = class_codes(r.confusion.classes());
  fs::create_directories(out_dir);
  write_text(out_dir / "report.txt", text);
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(report_to_json(r.report));
  j["top1_accuracy"] = r.top1;
  j["top2_accuracy"] = r.top2;
  j["top3_accuracy"] = r.top3;
  j["mean_loss"] = r.mean_loss;
  write_text(out_dir / "report.json", j.dump(2) + "\n");
  write_text(out_dir / "confusion.csv", confusion_to_csv(r.confusion, codes));
  out << text;
  out << "Top-1 accuracy: " << format_2dp(r.top1) << '\n';
  out << "Top-2 accuracy: " << format_2dp(r.top2) << '\n';
  out << "Top-3 accuracy: " << format_2dp(r.top3) << '\n';
  out << "Mean loss: " << r.mean_loss << '\n';
}

/// Columns: one per class code holding probabilities, plus true_dx.
std::pair<Tensor, std::vector<int>> read_predictions_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!csv::next_line(in, line, line_no)) throw ParseError(1, "empty predictions file");
  const auto header = csv::split_line(line);
  std::size_t truth_col = header.size();
  std::array<std::size_t, kNumClasses> prob_col{};
  prob_col.fill(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "true_dx") truth_col = i;
    if (auto c = class_index(header[i])) prob_col[static_cast<std::size_t>(*c)] = i;
  }
  if (truth_col == header.size()) throw ParseError(line_no, "missing column true_dx");
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (prob_col[c] == header.size()) throw ParseError(line_no, "missing column " + std::string(kClassLabels[c].code));
  }
  std::vector<float> probs;
  std::vector<int> labels;
  while (csv::next_line(in, line, line_no)) {
    const auto f = csv::split_line(line);
    if (f.size() != header.size()) throw ParseError(line_no, "wrong field count");
    const auto t = class_index(f[truth_col]);
    if (!t) throw ParseError(line_no, "unknown diagnosis code '" + f[truth_col] + "'");
    labels.push_back(*t);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      try {
        probs.push_back(std::stof(f[prob_col[c]]));
      } catch (const std::exception&) {
        throw ParseError(line_no, "malformed probability");
      }
    }
  }
  if (labels.empty()) throw ValidationError("predictions file has no rows");
  return {Tensor({labels.size(), kNumClasses}, std::move(probs)), std::move(labels)};
}

std::atomic<InferenceService*> g_service{nullptr};

extern "C" void handle_stop_signal(int) {
  if (auto* s = g_service.load()) s->stop();
}

}  // namespace

int cli_dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Skin lesion classification pipeline", "dermnet"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::simple);

  std::string data_dir;
  app.add_option("--data-dir", data_dir, "Dataset root")->envname("DERM_DATA_DIR");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Load metadata, impute ages, split, build the resized image cache");
  fs::path prep_metadata, prep_images, prep_out;
  std::size_t prep_validation = 938, prep_size = 224;
  std::uint64_t prep_seed = 42;
  prepare->add_option("--metadata", prep_metadata, "HAM10000 metadata CSV");
  prepare->add_option("--images", prep_images, "Directory with <image_id>.jpg|png");
  prepare->add_option("--out", prep_out, "Output directory")->required();
  prepare->add_option("--validation", prep_validation, "Validation images")->capture_default_str();
  prepare->add_option("--seed", prep_seed)->capture_default_str();
  prepare->add_option("--size", prep_size, "Resized edge in pixels")->capture_default_str();

  // eda
  auto* eda = app.add_subcommand("eda", "Write age/localization/class histograms");
  fs::path eda_metadata, eda_out;
  bool eda_exclude_imputed = false;
  eda->add_option("--metadata", eda_metadata, "HAM10000 metadata CSV");
  eda->add_option("--out", eda_out, "Output directory")->required();
  eda->add_flag("--exclude-imputed", eda_exclude_imputed, "Leave imputed ages out of the age histograms");

  // augment
  auto* augment = app.add_subcommand("augment", "Rebalance minority classes with augmented copies");
  fs::path aug_split, aug_images, aug_out;
  std::size_t aug_target = 6000;
  AugmentPolicy policy;
  std::string fill = "nearest";
  int fill_value = 0;
  bool no_hflip = false, no_vflip = false, manifest_only = false;
  augment->add_option("--split", aug_split, "split.csv from prepare")->required()->check(CLI::ExistingFile);
  augment->add_option("--images", aug_images, "Source image directory (resized cache)");
  augment->add_option("--out", aug_out, "Output directory")->required();
  augment->add_option("--target", aug_target, "Per-class target count")->capture_default_str();
  augment->add_option("--seed", policy.seed)->capture_default_str();
  augment->add_option("--rotation", policy.rotation_range, "Rotation range in degrees")->capture_default_str();
  augment->add_option("--zoom", policy.zoom_range, "Zoom range")->capture_default_str();
  augment->add_flag("--no-hflip", no_hflip);
  augment->add_flag("--no-vflip", no_vflip);
  augment->add_option("--fill", fill)->check(CLI::IsMember({"nearest", "reflect", "constant"}))->capture_default_str();
  augment->add_option("--fill-value", fill_value)->check(CLI::Range(0, 255));
  augment->add_flag("--manifest-only", manifest_only, "Write the manifest without rendering images");

  // train
  auto* train = app.add_subcommand("train", "Train the classification head on frozen backbone features");
  fs::path tr_split, tr_images, tr_augmented, tr_out, tr_weights;
  ModelOptions tr_model;
  TrainConfig tr_config;
  std::uint64_t tr_init_seed = 0;
  bool tr_no_shuffle = false;
  train->add_option("--split", tr_split, "split.csv from prepare")->required()->check(CLI::ExistingFile);
  train->add_option("--images", tr_images, "Image directory")->required();
  train->add_option("--augmented", tr_augmented, "augment output directory (manifest.csv + images/)");
  train->add_option("--out", tr_out, "Output directory")->required();
  train->add_option("--weights", tr_weights, "Initial DWSN weights (e.g. imported ImageNet backbone)");
  train->add_option("--init-seed", tr_init_seed, "Seed for fresh initialization")->capture_default_str();
  tr_model.add(train);
  train->add_option("--epochs", tr_config.epochs)->capture_default_str();
  train->add_option("--batch-size", tr_config.batch_size)->capture_default_str();
  train->add_option("--lr", tr_config.learning_rate)->capture_default_str();
  train->add_option("--seed", tr_config.seed)->capture_default_str();
  train->add_flag("--no-shuffle", tr_no_shuffle);

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Confusion matrix, classification report and top-k accuracy");
  fs::path ev_model, ev_split, ev_images, ev_predictions, ev_out;
  std::string ev_subset = "validation";
  ModelOptions ev_opts;
  evaluate_cmd->add_option("--model", ev_model, "DWSN weights");
  evaluate_cmd->add_option("--split", ev_split, "split.csv from prepare");
  evaluate_cmd->add_option("--images", ev_images, "Image directory");
  evaluate_cmd->add_option("--subset", ev_subset)->check(CLI::IsMember({"train", "validation"}))->capture_default_str();
  evaluate_cmd->add_option("--predictions", ev_predictions, "CSV of precomputed probabilities (true_dx + class columns)");
  evaluate_cmd->add_option("--out", ev_out, "Output directory")->required();
  ev_opts.add(evaluate_cmd);

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Classify one image and print the ranked result as JSON");
  fs::path pr_model, pr_image;
  ModelOptions pr_opts;
  predict_cmd->add_option("--model", pr_model, "DWSN weights")->envname("DERM_MODEL_PATH")->required();
  predict_cmd->add_option("--image", pr_image, "PNG or JPEG image")->required()->check(CLI::ExistingFile);
  pr_opts.add(predict_cmd);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP inference service");
  fs::path sv_model;
  ServiceConfig sv_config;
  ModelOptions sv_opts;
  std::vector<std::string> sv_origins;
  serve->add_option("--model", sv_model, "DWSN weights")->envname("DERM_MODEL_PATH")->required();
  serve->add_option("--host", sv_config.host)->capture_default_str();
  serve->add_option("--port", sv_config.port)->envname("DERM_PORT")->capture_default_str();
  serve->add_option("--max-upload-bytes", sv_config.max_upload_bytes)->envname("DERM_MAX_UPLOAD_BYTES")->capture_default_str();
  serve->add_option("--cors-origin", sv_origins, "Allowed browser origin (repeatable)")->envname("DERM_CORS_ORIGINS")->delimiter(',');
  serve->add_option("--audit-log", sv_config.audit_log, "Append request checksums and results here");
  sv_opts.add(serve);

  // summary
  auto* summary = app.add_subcommand("summary", "Print the layer listing and census of a model");
  fs::path su_model;
  ModelOptions su_opts;
  summary->add_option("--model", su_model, "DWSN weights; omit to describe a fresh build");
  su_opts.add(summary);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (prepare->parsed()) {
      if (prep_metadata.empty()) {
        if (data_dir.empty()) throw ValidationError("--metadata or DERM_DATA_DIR is required");
        prep_metadata = fs::path(data_dir) / "HAM10000_metadata.csv";
      }
      auto records = load_metadata(prep_metadata);
      out << "loaded " << records.size() << " metadata records\n";
      auto imputed = impute_age(std::move(records));
      out << "imputed " << imputed.imputed << " missing ages with mean " << imputed.fill_value << '\n';
      DatasetIndex index = make_split(std::move(imputed.records), prep_validation, prep_seed);
      index.image_root = prep_images;
      out << "split: " << index.count(Split::train) << " train / " << index.count(Split::validation) << " validation\n";
      write_split_csv(index, prep_out / "split.csv");
      if (!prep_images.empty()) {
        std::size_t n = 0;
        for (const auto& r : index.records) {
          const auto src = find_image_file(prep_images, r.image_id);
          if (!src) throw Error("image not found for " + r.image_id);
          write_png(resize_bilinear(read_image(*src), prep_size, prep_size), prep_out / "images" / (r.image_id + ".png"));
          ++n;
        }
        out << "resized " << n << " images to " << prep_size << "x" << prep_size << '\n';
      }
      return 0;
    }

    if (eda->parsed()) {
      if (eda_metadata.empty()) {
        if (data_dir.empty()) throw ValidationError("--metadata or DERM_DATA_DIR is required");
        eda_metadata = fs::path(data_dir) / "HAM10000_metadata.csv";
      }
      const auto imputed = impute_age(load_metadata(eda_metadata));
      const EdaReport report = eda_histograms(imputed.records, !eda_exclude_imputed);
      write_eda(report, eda_out);
      out << "age mode bin starts at " << AgeHistogram::bin_lower(report.overall.mode_bin()) << '\n';
      out << "wrote EDA files to " << eda_out.string() << '\n';
      return 0;
    }

    if (augment->parsed()) {
      policy.horizontal_flip = !no_hflip;
      policy.vertical_flip = !no_vflip;
      policy.fill_mode = parse_fill_mode(fill);
      policy.fill_value = static_cast<std::uint8_t>(fill_value);
      const DatasetIndex index = read_split_csv(aug_split);
      const AugmentManifest manifest = rebalance_classes(index, AugmentPlan(aug_target), policy);
      write_manifest_csv(manifest, aug_out / "manifest.csv");
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        out << kClassLabels[c].code << ": " << manifest.original_counts[c] << " -> " << manifest.final_counts[c] << '\n';
      }
      out << "manifest: " << manifest.entries.size() << " synthetic images\n";
      if (!manifest_only) {
        if (aug_images.empty()) throw ValidationError("--images is required unless --manifest-only");
        materialize_manifest(manifest.entries, aug_images, aug_out / "images", policy.fill_value);
      }
      return 0;
    }

    if (train->parsed()) {
      tr_config.shuffle = !tr_no_shuffle;
      ModelGraph model;
      if (tr_weights.empty()) {
        Rng rng(tr_init_seed);
        model = build_mobilenet(tr_model.config(), rng);
      } else {
        model = load_model_file(tr_weights, tr_model);
      }
      model = set_trainable_boundary(std::move(model), TrainableBoundary::head_only);

      const DatasetIndex index = read_split_csv(tr_split);
      ImageList train_list = images_in(index, Split::train, tr_images);
      if (!tr_augmented.empty()) {
        for (const auto& e : read_manifest_csv(tr_augmented / "manifest.csv")) {
          train_list.items.emplace_back(tr_augmented / "images", e.synthetic_id);
          train_list.labels.push_back(e.dx);
        }
      }
      const ImageList val_list = images_in(index, Split::validation, tr_images);
      const FeatureSet train_features = features_for(model, train_list, out, "training");
      const FeatureSet val_features = features_for(model, val_list, out, "validation");
      TrainResult result = train_head(std::move(model), train_features, val_features, tr_config);
      for (const auto& e : result.history) {
        out << "epoch " << e.epoch << ": loss " << e.train_loss << " acc " << e.train_acc << " val_loss " << e.val_loss
            << " val_acc " << e.val_acc << " val_top2 " << e.val_top2 << " val_top3 " << e.val_top3 << '\n';
      }
      write_history_csv(result.history, tr_out / "history.csv");
      save_weights(result.model, tr_out / "model.dwsn");
      out << "wrote " << (tr_out / "model.dwsn").string() << '\n';
      return 0;
    }

    if (evaluate_cmd->parsed()) {
      EvaluationResult result;
      if (!ev_predictions.empty()) {
        const auto [probs, labels] = read_predictions_csv(ev_predictions);
        result = evaluate_predictions(probs, labels);
      } else {
        if (ev_model.empty() || ev_split.empty() || ev_images.empty()) {
          throw ValidationError("evaluate needs --predictions, or --model with --split and --images");
        }
        const ModelGraph model = load_model_file(ev_model, ev_opts);
        const DatasetIndex index = read_split_csv(ev_split);
        const ImageList list = images_in(index, ev_subset == "train" ? Split::train : Split::validation, ev_images);
        result = evaluate_features(model, features_for(model, list, out, ev_subset.c_str()));
      }
      emit_evaluation(result, ev_out, out);
      return 0;
    }

    if (predict_cmd->parsed()) {
      std::string checksum;
      const ModelGraph model = load_model_file(pr_model, pr_opts, &checksum);
      InferenceService service({});
      service.set_model(model, checksum);
      const auto bytes = read_file_bytes(pr_image);
      out << prediction_to_json(predict_image_bytes(model, service.model_id(), bytes)) << '\n';
      return 0;
    }

    if (serve->parsed()) {
      if (!sv_origins.empty()) sv_config.cors_origins = sv_origins;
      InferenceService service(sv_config);
      service.load_model(sv_model, sv_opts.config());
      const int port = service.bind(sv_config.host, sv_config.port);
      out << "serving " << service.model_id() << " on " << sv_config.host << ':' << port << std::endl;
      g_service = &service;
      std::signal(SIGINT, handle_stop_signal);
      std::signal(SIGTERM, handle_stop_signal);
      service.listen();
      g_service = nullptr;
      return 0;
    }

    if (summary->parsed()) {
      ModelGraph model;
      if (su_model.empty()) {
        Rng rng(0);
        model = build_mobilenet(su_opts.config(), rng);
      } else {
        model = load_model_file(su_model, su_opts);
      }
      out << model_summary(set_trainable_boundary(std::move(model), TrainableBoundary::head_only)).to_text();
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace dermnet
