#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dermnet/augment.hpp"
#include "dermnet/checksum.hpp"
#include "dermnet/dataset.hpp"
#include "dermnet/errors.hpp"
#include "dermnet/labels.hpp"
#include "dermnet/metrics.hpp"
#include "dermnet/nn_ops.hpp"
#include "dermnet/service.hpp"
#include "dermnet/train.hpp"
#include "dermnet/weights_io.hpp"

namespace py = pybind11;
using namespace dermnet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Tensor::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor& t) {
  py::array_t<float> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Image to_image(const ByteArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw ValidationError("image must have shape (H, W, 3)");
  Image img(std::size_t(a.shape(1)), std::size_t(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

py::array_t<std::uint8_t> from_image(const Image& img) {
  py::array_t<std::uint8_t> out({py::ssize_t(img.height), py::ssize_t(img.width), py::ssize_t(3)});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

std::vector<int> to_labels(const IntArray& a) { return {a.data(), a.data() + a.size()}; }

Padding parse_padding(const std::string& p) {
  if (p == "same") return Padding::same;
  if (p == "valid") return Padding::valid;
  throw ValidationError("padding must be 'same' or 'valid'");
}

ConvParams conv_params(std::pair<std::size_t, std::size_t> stride, const std::string& padding) {
  return {stride.first, stride.second, parse_padding(padding)};
}

ModelConfig make_config(std::size_t input_size, double width, std::size_t blocks, std::size_t classes, float dropout,
                        const std::string& activation) {
  ModelConfig c;
  c.input_size = input_size;
  c.width_multiplier = width;
  c.num_blocks = blocks;
  c.num_classes = classes;
  c.dropout_rate = dropout;
  if (activation == "relu") {
    c.activation = Activation::relu;
  } else if (activation != "relu6") {
    throw ValidationError("activation must be 'relu6' or 'relu'");
  }
  c.validate();
  return c;
}

/// A model plus the checksum that names it.
struct PyModel {
  ModelGraph graph;
  std::string checksum;

  std::string model_id() const {
    InferenceService s({});
    s.set_model(graph, checksum);
    return s.model_id();
  }
};

Tensor images_to_batch(const PyModel& m, const ByteArray& images) {
  const std::size_t size = m.graph.config().input_size;
  std::vector<Image> batch;
  const bool single = images.ndim() == 3;
  if (!single && images.ndim() != 4) throw ValidationError("images must have shape (H, W, 3) or (N, H, W, 3)");
  const std::size_t n = single ? 1 : std::size_t(images.shape(0));
  const std::size_t h = std::size_t(images.shape(single ? 0 : 1)), w = std::size_t(images.shape(single ? 1 : 2));
  const std::size_t per = h * w * 3;
  for (std::size_t i = 0; i < n; ++i) {
    Image img(w, h);
    std::copy(images.data() + i * per, images.data() + (i + 1) * per, img.pixels.begin());
    batch.push_back(img.width == size && img.height == size ? std::move(img) : resize_bilinear(img, size, size));
  }
  return preprocess_batch(batch);
}

}  // namespace

PYBIND11_MODULE(_dermnet, m) {
  m.doc() = "Depthwise-separable skin lesion classifier core";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ImageDecodeError>(m, "ImageDecodeError", PyExc_ValueError);
  py::register_exception<WeightFileError>(m, "WeightFileError", PyExc_IOError);

  py::list labels;
  for (const auto& l : kClassLabels) labels.append(py::make_tuple(std::string(l.code), std::string(l.name)));
  m.attr("CLASS_LABELS") = labels;

  m.def(
      "conv2d",
      [](const FloatArray& x, const FloatArray& w, std::optional<FloatArray> bias, std::pair<std::size_t, std::size_t> stride,
         const std::string& padding) {
        std::vector<float> b;
        if (bias) b.assign(bias->data(), bias->data() + bias->size());
        return to_array(conv2d(to_tensor(x), to_tensor(w), b, conv_params(stride, padding)));
      },
      py::arg("x"), py::arg("weights"), py::arg("bias") = py::none(), py::arg("stride") = std::pair<std::size_t, std::size_t>{1, 1},
      py::arg("padding") = "same", "NHWC cross-correlation with (Kh, Kw, Cin, Cout) weights.");
  m.def(
      "depthwise_conv2d",
      [](const FloatArray& x, const FloatArray& w, std::pair<std::size_t, std::size_t> stride, const std::string& padding) {
        return to_array(depthwise_conv2d(to_tensor(x), to_tensor(w), conv_params(stride, padding)));
      },
      py::arg("x"), py::arg("weights"), py::arg("stride") = std::pair<std::size_t, std::size_t>{1, 1},
      py::arg("padding") = "same", "Per-channel NHWC filter with (Kh, Kw, C) weights.");
  m.def("softmax", [](const FloatArray& x) { return to_array(softmax(to_tensor(x))); }, py::arg("logits"));
  m.def(
      "head_gradients",
      [](const FloatArray& features, const FloatArray& mask, const FloatArray& w, const FloatArray& b, const IntArray& labels) {
        const std::vector<int> l = to_labels(labels);
        const HeadGradients g =
            head_gradients(to_tensor(features), to_tensor(mask), to_tensor(w), to_tensor(b), one_hot(l, std::size_t(w.shape(1))));
        return py::make_tuple(g.loss, to_array(g.d_weights), to_array(g.d_bias));
      },
      py::arg("features"), py::arg("mask"), py::arg("weights"), py::arg("bias"), py::arg("labels"),
      "Returns (loss, d_weights, d_bias) for the softmax cross-entropy head.");

  m.def(
      "confusion_matrix",
      [](const IntArray& truth, const IntArray& pred, std::size_t k) {
        const ConfusionMatrix cm = confusion_matrix(to_labels(truth), to_labels(pred), k);
        py::array_t<std::int64_t> out({py::ssize_t(k), py::ssize_t(k)});
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) out.mutable_at(i, j) = cm.at(i, j);
        return out;
      },
      py::arg("truth"), py::arg("predicted"), py::arg("num_classes") = kNumClasses);
  m.def(
      "classification_report_json",
      [](const IntArray& truth, const IntArray& pred, std::size_t k) {
        return report_to_json(build_report(confusion_matrix(to_labels(truth), to_labels(pred), k)));
      },
      py::arg("truth"), py::arg("predicted"), py::arg("num_classes") = kNumClasses);
  m.def(
      "classification_report_text",
      [](const IntArray& truth, const IntArray& pred, std::size_t k) {
        return format_report(build_report(confusion_matrix(to_labels(truth), to_labels(pred), k)));
      },
      py::arg("truth"), py::arg("predicted"), py::arg("num_classes") = kNumClasses);
  m.def(
      "top_k_accuracy",
      [](const FloatArray& probs, const IntArray& truth, std::size_t k) {
        return top_k_accuracy(to_tensor(probs), to_labels(truth), k);
      },
      py::arg("probabilities"), py::arg("truth"), py::arg("k"));
  m.def("f1_score", &f1_score, py::arg("precision"), py::arg("recall"));
  m.def("format_2dp", &format_2dp, py::arg("value"));

  m.def(
      "apply_affine",
      [](const ByteArray& image, double rotation_deg, double zoom, bool hflip, bool vflip, const std::string& fill,
         std::uint8_t fill_value) {
        AugmentParams p;
        p.rotation_deg = rotation_deg;
        p.zoom = zoom;
        p.hflip = hflip;
        p.vflip = vflip;
        return from_image(apply_affine(to_image(image), p, parse_fill_mode(fill), fill_value));
      },
      py::arg("image"), py::arg("rotation_deg") = 0.0, py::arg("zoom") = 1.0, py::arg("hflip") = false,
      py::arg("vflip") = false, py::arg("fill") = "nearest", py::arg("fill_value") = 0,
      "Rotate (counter-clockwise degrees), zoom and flip an (H, W, 3) uint8 image about its centre.");
  m.def(
      "decode_image",
      [](const py::bytes& data) {
        const std::string s = data;
        return from_image(decode_image({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}));
      },
      py::arg("data"));
  m.def(
      "encode_png",
      [](const ByteArray& image) {
        const auto bytes = encode_png(to_image(image));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("image"));
  m.def(
      "resize_bilinear",
      [](const ByteArray& image, std::size_t height, std::size_t width) {
        return from_image(resize_bilinear(to_image(image), height, width));
      },
      py::arg("image"), py::arg("height"), py::arg("width"));

  py::class_<PyModel>(m, "Model")
      .def_static(
          "build",
          [](std::size_t input_size, double width, std::size_t blocks, std::size_t classes, float dropout,
             const std::string& activation, std::uint64_t seed) {
            Rng rng(seed);
            PyModel pm{build_mobilenet(make_config(input_size, width, blocks, classes, dropout, activation), rng), {}};
            pm.graph = set_trainable_boundary(std::move(pm.graph), TrainableBoundary::head_only);
            pm.checksum = sha256_hex(serialize_weights(pm.graph));
            return pm;
          },
          py::arg("input_size") = 224, py::arg("width") = 1.0, py::arg("blocks") = 13, py::arg("classes") = 7,
          py::arg("dropout") = 0.2f, py::arg("activation") = "relu6", py::arg("seed") = 0,
          "Fresh MobileNet-v1 with He-uniform kernels and a trainable head.")
      .def_static(
          "load",
          [](const std::string& path, std::size_t input_size) {
            const auto bytes = read_file_bytes(path);
            ModelConfig base;
            base.input_size = input_size;
            const ModelConfig cfg = infer_config(bytes, base);
            PyModel pm{set_trainable_boundary(deserialize_weights(bytes, cfg), TrainableBoundary::head_only),
                       sha256_hex(bytes)};
            return pm;
          },
          py::arg("path"), py::arg("input_size") = 224)
      .def("save", [](const PyModel& pm, const std::string& path) { save_weights(pm.graph, path); }, py::arg("path"))
      .def_property_readonly("model_id", &PyModel::model_id)
      .def_property_readonly("input_size", [](const PyModel& pm) { return pm.graph.config().input_size; })
      .def_property_readonly("width", [](const PyModel& pm) { return pm.graph.config().width_multiplier; })
      .def_property_readonly("num_classes", [](const PyModel& pm) { return pm.graph.config().num_classes; })
      .def_property_readonly("weight_names", [](const PyModel& pm) { return pm.graph.weight_names(); })
      .def("weight", [](const PyModel& pm, const std::string& name) { return to_array(pm.graph.weight(name)); })
      .def_property_readonly("total_parameters", [](const PyModel& pm) { return model_summary(pm.graph).total_parameters; })
      .def_property_readonly("trainable_parameters", [](const PyModel& pm) { return pm.graph.trainable_parameter_count(); })
      .def_property_readonly("layer_counts", [](const PyModel& pm) { return model_summary(pm.graph).kind_counts; })
      .def("summary", [](const PyModel& pm) { return model_summary(pm.graph).to_text(); })
      .def(
          "predict",
          [](const PyModel& pm, const ByteArray& images) {
            const Tensor batch = images_to_batch(pm, images);
            Tensor probs;
            {
              py::gil_scoped_release release;
              probs = predict(pm.graph, batch);
            }
            return to_array(probs);
          },
          py::arg("images"), "Class probabilities for (H, W, 3) or (N, H, W, 3) uint8 images, resized to the input size.")
      .def(
          "features",
          [](const PyModel& pm, const ByteArray& images) { return to_array(extract_features(pm.graph, images_to_batch(pm, images))); },
          py::arg("images"))
      .def(
          "predict_bytes",
          [](const PyModel& pm, const py::bytes& data) {
            const std::string s = data;
            return prediction_to_json(
                predict_image_bytes(pm.graph, pm.model_id(), {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}));
          },
          py::arg("data"), "Ranked prediction JSON for encoded PNG or JPEG bytes.")
      .def(
          "train_head",
          [](PyModel& pm, const ByteArray& images, const IntArray& labels, const ByteArray& val_images,
             const IntArray& val_labels, std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed,
             bool shuffle) {
            TrainConfig cfg;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.learning_rate = lr;
            cfg.seed = seed;
            cfg.shuffle = shuffle;
            const LabeledBatch train{images_to_batch(pm, images), to_labels(labels)};
            const LabeledBatch val{images_to_batch(pm, val_images), to_labels(val_labels)};
            TrainResult r = train_head(pm.graph, train, val, cfg);
            pm.graph = std::move(r.model);
            pm.checksum = sha256_hex(serialize_weights(pm.graph));
            py::list history;
            for (const auto& e : r.history) {
              py::dict d;
              d["epoch"] = e.epoch;
              d["train_loss"] = e.train_loss;
              d["train_acc"] = e.train_acc;
              d["train_top2"] = e.train_top2;
              d["train_top3"] = e.train_top3;
              d["val_loss"] = e.val_loss;
              d["val_acc"] = e.val_acc;
              d["val_top2"] = e.val_top2;
              d["val_top3"] = e.val_top3;
              history.append(d);
            }
            return history;
          },
          py::arg("images"), py::arg("labels"), py::arg("val_images"), py::arg("val_labels"), py::arg("epochs") = 50,
          py::arg("batch_size") = 10, py::arg("lr") = 1e-3, py::arg("seed") = 0, py::arg("shuffle") = true,
          "Trains the head in place on frozen backbone features; returns the per-epoch history.");
}
