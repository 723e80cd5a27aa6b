#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include "loopnet/loop.hpp"

namespace loopnet {

struct CheckpointHeader {
  ModelConfig model;
  LoopConfig loop;
  TrainConfig train;
  int64_t step = 0;
  std::string rng_state;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

namespace detail {

// Weight payloads are little-endian f32 regardless of host endianness or
// the model's compute precision.
inline void write_f32_le(std::ofstream& f, const float* data, size_t count) {
  std::vector<unsigned char> buf(count * 4);
  for (size_t i = 0; i < count; ++i) {
    uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    buf[4 * i] = static_cast<unsigned char>(bits & 0xFF);
    buf[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xFF);
    buf[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xFF);
    buf[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xFF);
  }
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
}

inline std::vector<float> read_f32_le(std::ifstream& f, size_t count) {
  std::vector<unsigned char> buf(count * 4);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size()));
  std::vector<float> out(count);
  for (size_t i = 0; i < count; ++i) {
    const uint32_t bits = static_cast<uint32_t>(buf[4 * i]) |
                          (static_cast<uint32_t>(buf[4 * i + 1]) << 8) |
                          (static_cast<uint32_t>(buf[4 * i + 2]) << 16) |
                          (static_cast<uint32_t>(buf[4 * i + 3]) << 24);
    std::memcpy(&out[i], &bits, 4);
  }
  return out;
}

}  // namespace detail

/// Writes header.json + weights.bin into dir. The header carries the configs,
/// step, rng state, a metric snapshot, and a name/shape/offset index over the
/// payload; the payload is every trainable tensor once, as raw LE f32.
template <typename F>
void save_checkpoint(const std::string& dir, const Model<F>& m,
                     const CheckpointHeader& hdr) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create checkpoint directory '" + dir +
                  "': " + ec.message());
  }
  const auto params = m.parameters();

  ordered_json j;
  j["model"] = model_to_json(hdr.model);
  j["loop"] = loop_to_json(hdr.loop);
  j["train"] = train_to_json(hdr.train);
  j["step"] = hdr.step;
  j["rng_state"] = hdr.rng_state;
  j["metrics"] = ordered_json{{"train_loss", hdr.train_loss},
                              {"val_loss", hdr.val_loss}};
  ordered_json index = ordered_json::array();
  int64_t offset = 0;
  for (const auto& p : params) {
    ordered_json entry;
    entry["name"] = p.name;
    entry["shape"] = p.tensor.shape();
    entry["offset_bytes"] = offset;
    index.push_back(entry);
    offset += p.tensor.size() * 4;
  }
  j["tensors"] = index;

  std::ofstream hf(dir + "/header.json", std::ios::trunc);
  if (!hf) {
    throw IoError("cannot write '" + dir + "/header.json'");
  }
  hf << j.dump(2) << "\n";

  std::ofstream wf(dir + "/weights.bin", std::ios::binary | std::ios::trunc);
  if (!wf) {
    throw IoError("cannot write '" + dir + "/weights.bin'");
  }
  std::vector<float> scratch;
  for (const auto& p : params) {
    const auto& d = p.tensor.data();
    scratch.resize(d.size());
    for (size_t i = 0; i < d.size(); ++i) {
      scratch[i] = static_cast<float>(d[i]);
    }
    detail::write_f32_le(wf, scratch.data(), scratch.size());
  }
  if (!wf) {
    throw IoError("short write to '" + dir + "/weights.bin'");
  }
}

inline CheckpointHeader read_checkpoint_header(const std::string& dir) {
  std::ifstream hf(dir + "/header.json");
  if (!hf) {
    throw IoError("cannot open '" + dir + "/header.json'");
  }
  ordered_json j;
  try {
    hf >> j;
  } catch (const std::exception& e) {
    throw IoError("'" + dir + "/header.json' is not valid JSON: " + e.what());
  }
  CheckpointHeader hdr;
  hdr.model = model_from_json(j.at("model"), "model");
  hdr.loop = loop_from_json(j.at("loop"), "loop");
  hdr.train = train_from_json(j.at("train"), "train");
  hdr.step = j.at("step").get<int64_t>();
  hdr.rng_state = j.at("rng_state").get<std::string>();
  hdr.train_loss = j.at("metrics").at("train_loss").get<double>();
  hdr.val_loss = j.at("metrics").at("val_loss").get<double>();
  return hdr;
}

/// Rebuilds a model from a checkpoint directory: configs from the header,
/// weights from the payload (looked up by name, shapes verified).
template <typename F>
Model<F> load_checkpoint(const std::string& dir,
                         CheckpointHeader* hdr_out = nullptr) {
  const CheckpointHeader hdr = read_checkpoint_header(dir);
  std::ifstream hf(dir + "/header.json");
  ordered_json j;
  hf >> j;

  Model<F> m = init_model<F>(hdr.model, hdr.loop, /*seed=*/0);
  auto params = m.parameters();

  std::ifstream wf(dir + "/weights.bin", std::ios::binary);
  if (!wf) {
    throw IoError("cannot open '" + dir + "/weights.bin'");
  }
  const auto& index = j.at("tensors");
  if (index.size() != params.size()) {
    throw IoError("checkpoint '" + dir + "' indexes " +
                  std::to_string(index.size()) + " tensors; model has " +
                  std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& entry = index[i];
    const std::string name = entry.at("name").get<std::string>();
    if (name != params[i].name) {
      throw IoError("checkpoint tensor #" + std::to_string(i) + " is '" +
                    name + "'; expected '" + params[i].name + "'");
    }
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    if (shape != params[i].tensor.shape()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " +
                    shape_string(shape) + "; model expects " +
                    shape_string(params[i].tensor.shape()));
    }
    wf.seekg(entry.at("offset_bytes").get<int64_t>());
    const auto vals =
        detail::read_f32_le(wf, static_cast<size_t>(params[i].tensor.size()));
    if (!wf) {
      throw IoError("short read from '" + dir + "/weights.bin' for '" + name +
                    "'");
    }
    auto& dst = params[i].tensor.data();
    for (size_t k = 0; k < vals.size(); ++k) {
      dst[k] = static_cast<F>(vals[k]);
    }
  }
  if (hdr_out) {
    *hdr_out = hdr;
  }
  return m;
}

}  // namespace loopnet
