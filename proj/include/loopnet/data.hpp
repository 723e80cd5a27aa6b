#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "loopnet/config.hpp"
#include "loopnet/tensor.hpp"

namespace loopnet {

inline constexpr int64_t kByteVocab = 256;

/// Byte-level encoding: one token per input byte.
inline std::vector<uint16_t> encode_bytes(const std::string& text) {
  std::vector<uint16_t> out;
  out.reserve(text.size());
  for (unsigned char c : text) {
    out.push_back(static_cast<uint16_t>(c));
  }
  return out;
}

inline std::string decode_bytes(const std::vector<uint16_t>& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (uint16_t t : tokens) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

struct TokenStream {
  std::string path;
  std::vector<uint16_t> tokens;
  int64_t vocab_size = kByteVocab;
  std::string encoding = "byte";

  int64_t token_count() const { return static_cast<int64_t>(tokens.size()); }
};

struct Batch {
  ITensor inputs;
  ITensor targets;
};

namespace detail {

// Token files are raw little-endian u16 ids regardless of host endianness.
inline void write_u16_file(const std::string& path,
                           const uint16_t* data, size_t count) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw IoError("cannot open '" + path + "' for writing");
  }
  std::vector<unsigned char> buf(count * 2);
  for (size_t i = 0; i < count; ++i) {
    buf[2 * i] = static_cast<unsigned char>(data[i] & 0xFF);
    buf[2 * i + 1] = static_cast<unsigned char>(data[i] >> 8);
  }
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!f) {
    throw IoError("short write to '" + path + "'");
  }
}

inline std::vector<uint16_t> read_u16_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) {
    throw IoError("cannot open '" + path + "'");
  }
  const std::streamsize bytes = f.tellg();
  if (bytes % 2 != 0) {
    throw IoError("'" + path + "' has odd length " + std::to_string(bytes) +
                  "; expected little-endian u16 ids");
  }
  f.seekg(0);
  std::vector<unsigned char> buf(static_cast<size_t>(bytes));
  f.read(reinterpret_cast<char*>(buf.data()), bytes);
  if (!f) {
    throw IoError("short read from '" + path + "'");
  }
  std::vector<uint16_t> out(static_cast<size_t>(bytes) / 2);
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<uint16_t>(buf[2 * i] |
                                   (static_cast<uint16_t>(buf[2 * i + 1])
                                    << 8));
  }
  return out;
}

}  // namespace detail

/// Reads a raw text/bytes file, byte-encodes it, splits the contiguous tail
/// off as validation, and writes train.bin, val.bin and manifest.json into
/// out_dir. Returns the two streams.
inline std::pair<TokenStream, TokenStream> prepare_dataset(
    const std::string& input_path, const std::string& out_dir,
    double val_fraction) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in (0,1), got " +
                      std::to_string(val_fraction));
  }
  std::ifstream in(input_path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open input '" + input_path + "'");
  }
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (text.empty()) {
    throw IoError("input '" + input_path + "' is empty");
  }
  const std::vector<uint16_t> all = encode_bytes(text);
  const int64_t n = static_cast<int64_t>(all.size());
  int64_t val_count = static_cast<int64_t>(
      std::llround(static_cast<double>(n) * val_fraction));
  val_count = std::max<int64_t>(1, std::min<int64_t>(val_count, n - 1));
  const int64_t train_count = n - val_count;

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create output directory '" + out_dir +
                  "': " + ec.message());
  }

  TokenStream train, val;
  train.path = out_dir + "/train.bin";
  val.path = out_dir + "/val.bin";
  train.tokens.assign(all.begin(), all.begin() + train_count);
  val.tokens.assign(all.begin() + train_count, all.end());
  detail::write_u16_file(train.path, train.tokens.data(),
                         train.tokens.size());
  detail::write_u16_file(val.path, val.tokens.data(), val.tokens.size());

  ordered_json manifest;
  manifest["encoding"] = "byte";
  manifest["vocab_size"] = kByteVocab;
  manifest["token_count"] = n;
  std::ofstream mf(out_dir + "/manifest.json", std::ios::trunc);
  if (!mf) {
    throw IoError("cannot write '" + out_dir + "/manifest.json'");
  }
  mf << manifest.dump(2) << "\n";
  return {std::move(train), std::move(val)};
}

/// Loads the train/val streams written by prepare_dataset from a directory.
inline std::pair<TokenStream, TokenStream> load_dataset(
    const std::string& dir) {
  const std::string manifest_path = dir + "/manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) {
    throw IoError("cannot open '" + manifest_path +
                  "' (directory not prepared?)");
  }
  ordered_json manifest;
  try {
    mf >> manifest;
  } catch (const std::exception& e) {
    throw IoError("'" + manifest_path + "' is not valid JSON: " + e.what());
  }
  const std::string encoding =
      manifest.value("encoding", std::string("byte"));
  const int64_t vocab = manifest.value("vocab_size", kByteVocab);
  if (encoding != "byte") {
    throw ConfigError("unsupported encoding '" + encoding + "' in " +
                      manifest_path);
  }

  const auto load_one = [&](const std::string& path) {
    TokenStream s;
    s.path = path;
    s.tokens = detail::read_u16_file(path);
    s.vocab_size = vocab;
    s.encoding = encoding;
    for (size_t i = 0; i < s.tokens.size(); ++i) {
      if (s.tokens[i] >= vocab) {
        throw IoError("token id " + std::to_string(s.tokens[i]) +
                      " at position " + std::to_string(i) + " in '" + path +
                      "' exceeds vocab_size " + std::to_string(vocab));
      }
    }
    return s;
  };
  auto train = load_one(dir + "/train.bin");
  auto val = load_one(dir + "/val.bin");
  const int64_t total = manifest.value("token_count", int64_t(-1));
  if (total >= 0 && train.token_count() + val.token_count() != total) {
    throw IoError("manifest token_count " + std::to_string(total) +
                  " does not match " +
                  std::to_string(train.token_count() + val.token_count()) +
                  " tokens on disk under '" + dir + "'");
  }
  return {std::move(train), std::move(val)};
}

/// Draws batch_size independent uniform start offsets and returns the
/// (window, window-shifted-by-one) pair. Deterministic per rng state.
inline Batch sample_batch(const TokenStream& stream, int64_t batch_size,
                          int64_t context_len, Rng& rng) {
  if (batch_size < 1 || context_len < 1) {
    throw ContractError("sample_batch: batch_size and context_len must be "
                        "positive");
  }
  const int64_t n = stream.token_count();
  if (n < context_len + 1) {
    throw ContractError("sample_batch: stream has " + std::to_string(n) +
                        " tokens; need at least context_len + 1 = " +
                        std::to_string(context_len + 1));
  }
  Batch b;
  b.inputs = ITensor::zeros({batch_size, context_len});
  b.targets = ITensor::zeros({batch_size, context_len});
  const uint64_t span = static_cast<uint64_t>(n - context_len);
  for (int64_t i = 0; i < batch_size; ++i) {
    const int64_t off = static_cast<int64_t>(rng.bounded(span));
    for (int64_t t = 0; t < context_len; ++t) {
      b.inputs.data[static_cast<size_t>(i * context_len + t)] =
          static_cast<int32_t>(stream.tokens[static_cast<size_t>(off + t)]);
      b.targets.data[static_cast<size_t>(i * context_len + t)] =
          static_cast<int32_t>(
              stream.tokens[static_cast<size_t>(off + t + 1)]);
    }
  }
  return b;
}

}  // namespace loopnet
