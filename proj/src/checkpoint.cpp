#include "cisum/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cisum/errors.hpp"

namespace cisum {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'S', 'U', 'M', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError("checkpoint truncated reading " + what);
  return v;
}

std::string get_string(std::istream& in, std::uint64_t n, const std::string& what) {
  if (n > (1ULL << 32)) throw ParseError("checkpoint: implausible length for " + what);
  std::string s(static_cast<std::size_t>(n), '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw ParseError("checkpoint truncated reading " + what);
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::deque<ag::Parameter>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string m = meta.dump();
  put<std::uint64_t>(out, m.size());
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  put<std::uint64_t>(out, params.size());
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.cols()));
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(path.string() + " is not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointData data;
  const std::string meta = get_string(in, get<std::uint64_t>(in, "metadata length"), "metadata");
  try {
    data.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint metadata: ") + e.what());
  }
  const auto n = get<std::uint64_t>(in, "tensor count");
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = get_string(in, get<std::uint32_t>(in, "name length"), "tensor name");
    const auto rows = get<std::uint64_t>(in, name + " rows");
    const auto cols = get<std::uint64_t>(in, name + " cols");
    if (rows > (1ULL << 28) || cols > (1ULL << 28) || rows * cols > (1ULL << 30)) {
      throw ParseError("checkpoint: implausible shape for " + name);
    }
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw ParseError("checkpoint truncated in tensor " + name);
    }
    data.tensors.emplace_back(std::move(name), std::move(m));
  }
  return data;
}

void assign_parameters(std::deque<ag::Parameter>& params, const CheckpointData& data) {
  std::unordered_map<std::string, const Matrix*> by_name;
  for (const auto& [name, m] : data.tensors) {
    if (!by_name.emplace(name, &m).second) throw ConfigError("checkpoint: duplicate tensor " + name);
  }
  if (by_name.size() != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ConfigError("checkpoint: missing tensor " + p.name);
    const Matrix& m = *it->second;
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw ConfigError("checkpoint: tensor " + p.name + " has shape " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ", expected " + std::to_string(p.value.rows()) + "x" +
                        std::to_string(p.value.cols()));
    }
    p.value = m;
  }
}

void save_model(const std::filesystem::path& path, const model::CisumModel& m, const Vocab& vocab,
                const Tokenizer& tokenizer) {
  nlohmann::json meta;
  meta["kind"] = "cisum-model";
  meta["config"] = m.config();
  meta["vocab"] = vocab.tokens();
  meta["tokenizer"] = tokenizer.name();
  write_checkpoint(path, meta, m.parameters().all());
}

LoadedModel load_model(const std::filesystem::path& path) {
  const CheckpointData data = read_checkpoint(path);
  if (data.meta.value("kind", "") != "cisum-model") {
    throw ConfigError(path.string() + " is not a summarisation model checkpoint");
  }
  LoadedModel out;
  ModelConfig config;
  try {
    config = data.meta.at("config").get<ModelConfig>();
    out.vocab = Vocab::from_tokens(data.meta.at("vocab").get<std::vector<std::string>>());
    out.tokenizer = Tokenizer::from_name(data.meta.at("tokenizer").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint metadata: ") + e.what());
  }
  if (config.vocab_size != out.vocab.size()) throw ConfigError("checkpoint: vocabulary size disagrees with config");
  out.model = std::make_unique<model::CisumModel>(config);
  assign_parameters(out.model->parameters().all(), data);
  return out;
}

}  // namespace cisum
