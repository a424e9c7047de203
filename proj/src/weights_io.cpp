#include "dermnet/weights_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "dermnet/errors.hpp"

namespace dermnet {

namespace {

using json = nlohmann::json;
constexpr std::size_t kPreambleBytes = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t pos, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
  return v;
}

struct ParsedFile {
  std::vector<WeightRecord> records;
  std::span<const std::uint8_t> payload;
};

ParsedFile parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0) {
    throw WeightFormatError("not a DWSN weight file (bad magic)");
  }
  if (bytes.size() < kPreambleBytes) throw TruncatedPayloadError("weight file truncated inside the preamble");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kWeightVersion) {
    throw WeightFormatError("unsupported DWSN version " + std::to_string(version));
  }
  const std::uint64_t header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - kPreambleBytes) throw TruncatedPayloadError("weight file truncated inside the header");

  const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + kPreambleBytes);
  json header;
  try {
    header = json::parse(header_begin, header_begin + header_len);
  } catch (const json::exception& e) {
    throw WeightFormatError(std::string("malformed weight header: ") + e.what());
  }
  if (!header.is_array()) throw WeightFormatError("weight header must be a JSON array");

  ParsedFile parsed;
  parsed.payload = bytes.subspan(kPreambleBytes + header_len);
  try {
    for (const auto& r : header) {
      WeightRecord rec;
      rec.name = r.at("name").get<std::string>();
      rec.dtype = r.at("dtype").get<std::string>();
      rec.shape = r.at("shape").get<Tensor::Shape>();
      rec.offset = r.at("offset").get<std::uint64_t>();
      rec.length = r.at("length").get<std::uint64_t>();
      parsed.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw WeightFormatError(std::string("malformed weight record: ") + e.what());
  }
  return parsed;
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const ModelGraph& model) {
  json header = json::array();
  std::uint64_t offset = 0;
  for (const auto& name : model.weight_names()) {
    const Tensor& t = model.weight(name);
    const std::uint64_t length = t.size() * sizeof(float);
    header.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset}, {"length", length}});
    offset += length;
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPreambleBytes + text.size() + offset);
  out.insert(out.end(), std::begin(kWeightMagic), std::end(kWeightMagic));
  put_u32(out, kWeightVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& name : model.weight_names()) {
    for (float v : model.weight(name).data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<WeightRecord> read_weight_records(std::span<const std::uint8_t> bytes) { return parse(bytes).records; }

ModelGraph deserialize_weights(std::span<const std::uint8_t> bytes, const ModelConfig& config) {
  const ParsedFile file = parse(bytes);
  Rng scratch(0);
  ModelGraph model = build_mobilenet(config, scratch);

  std::map<std::string, const WeightRecord*, std::less<>> by_name;
  for (const auto& rec : file.records) {
    if (!by_name.emplace(rec.name, &rec).second) throw WeightFormatError("duplicate tensor in weight file: " + rec.name);
    if (!model.has_weight(rec.name)) throw WeightFormatError("weight file has unexpected tensor: " + rec.name);
  }

  for (const auto& name : model.weight_names()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw MissingWeightError(name);
    const WeightRecord& rec = *it->second;
    Tensor& dst = model.mutable_weight(name);
    if (rec.dtype != "f32") throw WeightFormatError("tensor " + name + " has unsupported dtype " + rec.dtype);
    if (rec.shape != dst.shape()) {
      throw WeightShapeError("tensor " + name + " has shape " + shape_string(rec.shape) + ", model expects " +
                             shape_string(dst.shape()));
    }
    if (rec.length != dst.size() * sizeof(float)) {
      throw WeightShapeError("tensor " + name + " payload length does not match its shape");
    }
    if (rec.offset > file.payload.size() || rec.length > file.payload.size() - rec.offset) {
      throw TruncatedPayloadError("payload truncated inside tensor " + name);
    }
    auto out = dst.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(file.payload, rec.offset + 4 * i, 4)));
    }
  }
  return model;
}

void save_weights(const ModelGraph& model, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_weights(model));
}

ModelGraph load_weights(const std::filesystem::path& path, const ModelConfig& config) {
  return deserialize_weights(read_file_bytes(path), config);
}

ModelConfig infer_config(std::span<const std::uint8_t> bytes, ModelConfig base) {
  const auto records = read_weight_records(bytes);
  auto find = [&](const std::string& name) -> const WeightRecord& {
    for (const auto& r : records) {
      if (r.name == name) return r;
    }
    throw MissingWeightError(name);
  };

  // Every scaled width w = floor(f * alpha) constrains alpha to [w/f, (w+1)/f).
  double lo = 0.0, hi = 1e9;
  auto constrain = [&](std::size_t width, std::size_t filters) {
    lo = std::max(lo, static_cast<double>(width) / static_cast<double>(filters));
    hi = std::min(hi, static_cast<double>(width + 1) / static_cast<double>(filters));
  };
  constrain(find("conv1/kernel").shape.at(3), kStemFilters);
  std::size_t blocks = 0;
  while (blocks < kMobileNetBlocks.size()) {
    const std::string pw = "conv_pw_" + std::to_string(blocks + 1) + "/kernel";
    auto it = std::find_if(records.begin(), records.end(), [&](const WeightRecord& r) { return r.name == pw; });
    if (it == records.end()) break;
    constrain(it->shape.at(3), kMobileNetBlocks[blocks].pointwise_filters);
    ++blocks;
  }
  if (lo >= hi) throw WeightFormatError("weight shapes do not follow a single width multiplier");

  base.width_multiplier = lo;
  base.num_blocks = blocks;
  base.num_classes = find("dense/kernel").shape.at(1);
  return base;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace dermnet
