#include "museli/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace museli {
namespace {

constexpr const char* kMagic = "museli-ckpt-1";

using nlohmann::ordered_json;

ordered_json config_to_json(const ModelConfig& c) {
  return ordered_json{{"feat_dim", c.feat_dim},
                      {"d_model", c.d_model},
                      {"num_speech_layers", c.num_speech_layers},
                      {"num_mm_layers", c.num_mm_layers},
                      {"num_heads", c.num_heads},
                      {"conv_kernel_size", c.conv_kernel_size},
                      {"ff_multiplier", c.ff_multiplier},
                      {"subsample_factor", c.subsample_factor},
                      {"vocab_size", c.vocab_size},
                      {"num_languages", c.num_languages},
                      {"max_text_tokens", c.max_text_tokens},
                      {"max_speech_frames", c.max_speech_frames},
                      {"pooling", pooling_to_string(c.pooling)}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.feat_dim = j.at("feat_dim").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.num_speech_layers = j.at("num_speech_layers").get<int>();
  c.num_mm_layers = j.at("num_mm_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.conv_kernel_size = j.at("conv_kernel_size").get<int>();
  c.ff_multiplier = j.at("ff_multiplier").get<int>();
  c.subsample_factor = j.at("subsample_factor").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.num_languages = j.at("num_languages").get<int>();
  c.max_text_tokens = j.at("max_text_tokens").get<int>();
  c.max_speech_frames = j.at("max_speech_frames").get<int>();
  c.pooling = pooling_from_string(j.at("pooling").get<std::string>());
  return c;
}

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

std::string pooling_to_string(PoolingKind k) {
  return k == PoolingKind::attentive ? "attentive" : "mean";
}

PoolingKind pooling_from_string(const std::string& s) {
  if (s == "attentive") return PoolingKind::attentive;
  if (s == "mean") return PoolingKind::mean;
  throw std::invalid_argument("unknown pooling kind: " + s);
}

void save_checkpoint(Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot open checkpoint for write: " +
                             path.string());
  out << kMagic << "\n";
  ordered_json header{{"config", config_to_json(ckpt.config)},
                      {"language_list", ckpt.language_list}};
  const std::string hs = header.dump();
  write_u32(out, static_cast<uint32_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  uint32_t count = 0;
  ckpt.params.for_each_tensor(
      [&](const std::string&, Matd&) { ++count; });
  write_u32(out, count);
  ckpt.params.for_each_tensor([&](const std::string& name, Matd& m) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(m.rows()));
    write_u32(out, static_cast<uint32_t>(m.cols()));
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) {
        const float v = static_cast<float>(m(r, c));
        out.write(reinterpret_cast<const char*>(&v), 4);
      }
  });
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kMagic)
    throw std::runtime_error("unrecognized checkpoint version in " +
                             path.string());
  const uint32_t hlen = read_u32(in);
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  Checkpoint ckpt;
  try {
    nlohmann::json header = nlohmann::json::parse(hs);
    ckpt.config = config_from_json(header.at("config"));
    ckpt.language_list =
        header.at("language_list").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint header parse error: " +
                             std::string(e.what()));
  }
  ckpt.params = ModelParams<double>::zeros_like(ckpt.config);

  const uint32_t count = read_u32(in);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t nlen = read_u32(in);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    const uint32_t rows = read_u32(in);
    const uint32_t cols = read_u32(in);
    bool placed = false;
    ckpt.params.for_each_tensor([&](const std::string& n, Matd& m) {
      if (n != name) return;
      if (m.rows() != static_cast<int>(rows) ||
          m.cols() != static_cast<int>(cols))
        throw std::runtime_error("checkpoint tensor shape mismatch for " + n);
      for (uint32_t r = 0; r < rows; ++r)
        for (uint32_t c = 0; c < cols; ++c) {
          float v;
          in.read(reinterpret_cast<char*>(&v), 4);
          m(r, c) = v;
        }
      placed = true;
    });
    if (!placed)
      throw std::runtime_error("checkpoint holds unknown tensor: " + name);
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
  return ckpt;
}

std::string file_hash_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for hash: " + path.string());
  uint64_t h = 0xCBF29CE484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ULL;
    }
    if (!in) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace museli
