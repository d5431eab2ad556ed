#include "ldam/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace ldam {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'D', 'A', 'M', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf_.append(raw, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void str32(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void read_into(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CheckpointError("corrupt checkpoint: unexpected end of data");
  }
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const numerics::Shape& shape, const Matrix& value) {
  w.str32(name);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
  w.bytes(value.data(), static_cast<std::size_t>(value.size()) * sizeof(double));
}

struct RawTensor {
  numerics::Shape shape;
  Matrix value;
};

json config_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"hidden", c.hidden},
          {"max_note_len", c.max_note_len},
          {"num_indicators", c.num_indicators},
          {"num_labels", c.num_labels},
          {"time_steps", c.time_steps},
          {"ngram", c.ngram},
          {"ts_ngram", c.ts_ngram},
          {"conv_channels", c.conv_channels},
          {"mode", to_string(c.mode)},
          {"attention", to_string(c.attention)},
          {"lambda_label", c.lambda_label}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<Eigen::Index>();
  c.hidden = j.at("hidden").get<Eigen::Index>();
  c.max_note_len = j.at("max_note_len").get<Eigen::Index>();
  c.num_indicators = j.at("num_indicators").get<Eigen::Index>();
  c.num_labels = j.at("num_labels").get<Eigen::Index>();
  c.time_steps = j.at("time_steps").get<Eigen::Index>();
  c.ngram = j.at("ngram").get<Eigen::Index>();
  c.ts_ngram = j.at("ts_ngram").get<Eigen::Index>();
  c.conv_channels = j.at("conv_channels").get<Eigen::Index>();
  c.mode = parse_modality(j.at("mode").get<std::string>());
  c.attention = parse_attention(j.at("attention").get<std::string>());
  c.lambda_label = j.at("lambda_label").get<double>();
  c.validate();
  return c;
}

// Wall-clock seconds stay out of the file so identical runs write identical bytes.
json log_json(const TrainLog& log) {
  json records = json::array();
  for (const auto& r : log.records) {
    json e = {{"epoch", r.epoch}, {"loss", r.loss}, {"term1", r.term1}, {"term2", r.term2}};
    e["val_micro_auc"] = r.val_micro_auc ? json(*r.val_micro_auc) : json(nullptr);
    records.push_back(std::move(e));
  }
  return records;
}

TrainLog log_from(const json& j) {
  TrainLog log;
  for (const auto& e : j) {
    EpochRecord r;
    r.epoch = e.at("epoch").get<int>();
    r.loss = e.at("loss").get<double>();
    r.term1 = e.at("term1").get<double>();
    r.term2 = e.at("term2").get<double>();
    if (!e.at("val_micro_auc").is_null()) r.val_micro_auc = e.at("val_micro_auc").get<double>();
    log.records.push_back(r);
  }
  return log;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& config) { return config_json(config).dump(2); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("model config: ") + e.what());
  }
}

Checkpoint make_checkpoint(const ModelConfig& config, const TaskSchema& schema, const std::string& embeddings,
                           const TrainState& state, std::uint64_t seed) {
  Checkpoint c;
  c.config = config;
  c.schema = schema;
  c.embeddings = embeddings;
  c.params = state.params.clone();
  c.training = TrainingProgress{state.epochs_completed, seed, state.adam, state.log};
  return c;
}

TrainState resume_state(const Checkpoint& checkpoint) {
  if (!checkpoint.training) throw CheckpointError("checkpoint holds no training progress to resume from");
  TrainState s;
  s.params = checkpoint.params.clone();
  s.adam = checkpoint.training->adam;
  s.epochs_completed = checkpoint.training->epochs_completed;
  s.log = checkpoint.training->log;
  return s;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  checkpoint.config.validate();
  checkpoint.params.check_shapes(checkpoint.config);
  auto named = const_cast<ModelParams&>(checkpoint.params).named();

  json meta;
  meta["config"] = config_json(checkpoint.config);
  meta["schema"] = json::parse(schema_to_json(checkpoint.schema));
  meta["embeddings"] = checkpoint.embeddings;
  std::vector<std::pair<std::string, const Matrix*>> moments;
  if (checkpoint.training) {
    const auto& t = *checkpoint.training;
    const bool has_moments = !t.adam.m.empty();
    if (has_moments && (t.adam.m.size() != named.size() || t.adam.v.size() != named.size())) {
      throw CheckpointError("optimizer moments do not match the parameter list");
    }
    meta["training"] = {{"epochs_completed", t.epochs_completed},
                        {"seed", t.seed},
                        {"adam",
                         {{"step", t.adam.step},
                          {"lr", t.adam.lr},
                          {"beta1", t.adam.beta1},
                          {"beta2", t.adam.beta2},
                          {"eps", t.adam.eps},
                          {"has_moments", has_moments}}},
                        {"log", log_json(t.log)}};
    if (has_moments) {
      for (std::size_t i = 0; i < named.size(); ++i) {
        moments.emplace_back("adam.m." + named[i].first, &t.adam.m[i]);
        moments.emplace_back("adam.v." + named[i].first, &t.adam.v[i]);
      }
    }
  } else {
    meta["training"] = nullptr;
  }

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string meta_text = meta.dump();
  w.put<std::uint64_t>(meta_text.size());
  w.bytes(meta_text.data(), meta_text.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(named.size() + moments.size()));
  for (const auto& [name, t] : named) write_tensor(w, name, t->shape(), t->value());
  for (std::size_t i = 0; i < moments.size(); ++i) {
    // Moments share the shape of the parameter they track.
    write_tensor(w, moments[i].first, named[i / 2].second->shape(), *moments[i].second);
  }
  w.put<std::uint64_t>(fnv1a(w.buffer().data(), w.buffer().size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw CheckpointError("failed while writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string();

  if (buf.size() < sizeof kMagic + sizeof(std::uint32_t) || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("corrupt " + where + ": not an LDAM checkpoint (bad magic)");
  }
  std::uint32_t version = 0;
  std::memcpy(&version, buf.data() + sizeof kMagic, sizeof version);
  if (version != kCheckpointVersion) {
    throw CheckpointError(where + " has format version " + std::to_string(version) + ", this build reads version " +
                          std::to_string(kCheckpointVersion));
  }
  if (buf.size() < sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t)) {
    throw CheckpointError("corrupt " + where + ": truncated");
  }
  const std::size_t body = buf.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + body, sizeof stored);
  if (stored != fnv1a(buf.data(), body)) throw CheckpointError("corrupt " + where + ": checksum mismatch");

  Reader r(buf, body);
  r.bytes(sizeof kMagic);
  r.get<std::uint32_t>();
  const auto meta_len = r.get<std::uint64_t>();
  if (meta_len > r.remaining()) throw CheckpointError("corrupt " + where + ": metadata length out of range");
  Checkpoint c;
  json meta;
  try {
    meta = json::parse(r.bytes(static_cast<std::size_t>(meta_len)));
    c.config = config_from(meta.at("config"));
    c.schema = schema_from_json(meta.at("schema").dump(), where);
    c.embeddings = meta.at("embeddings").get<std::string>();
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt " + where + ": " + e.what());
  }

  std::map<std::string, RawTensor> tensors;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name = r.bytes(name_len);
    const auto ndim = r.get<std::uint32_t>();
    if (ndim > 8) throw CheckpointError("corrupt " + where + ": tensor " + name + " has " + std::to_string(ndim) + " dims");
    RawTensor t;
    std::uint64_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim == 0 || dim > (1ULL << 32)) throw CheckpointError("corrupt " + where + ": bad dimension in " + name);
      t.shape.push_back(static_cast<numerics::Index>(dim));
      total *= dim;
    }
    if (total * sizeof(double) > r.remaining()) throw CheckpointError("corrupt " + where + ": tensor data truncated");
    t.value.resize(numerics::storage_rows(t.shape), numerics::storage_cols(t.shape));
    r.read_into(t.value.data(), static_cast<std::size_t>(total) * sizeof(double));
    if (!tensors.emplace(std::move(name), std::move(t)).second) {
      throw CheckpointError("corrupt " + where + ": duplicate tensor name");
    }
  }
  if (r.remaining() != 0) throw CheckpointError("corrupt " + where + ": trailing bytes");

  c.params = ModelParams::init(c.config, 0);
  auto named = c.params.named();
  auto take = [&](const std::string& name, const numerics::Shape& shape) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError(where + " is missing tensor " + name);
    if (it->second.shape != shape) {
      throw CheckpointError(where + ": tensor " + name + " has shape " + numerics::shape_string(it->second.shape) +
                            ", config requires " + numerics::shape_string(shape));
    }
    return std::move(it->second.value);
  };
  for (auto& [name, t] : named) t->mutable_value() = take(name, t->shape());

  try {
    const auto& tj = meta.at("training");
    if (!tj.is_null()) {
      TrainingProgress p;
      p.epochs_completed = tj.at("epochs_completed").get<int>();
      p.seed = tj.at("seed").get<std::uint64_t>();
      const auto& aj = tj.at("adam");
      p.adam.step = aj.at("step").get<std::int64_t>();
      p.adam.lr = aj.at("lr").get<double>();
      p.adam.beta1 = aj.at("beta1").get<double>();
      p.adam.beta2 = aj.at("beta2").get<double>();
      p.adam.eps = aj.at("eps").get<double>();
      if (aj.at("has_moments").get<bool>()) {
        for (auto& [name, t] : named) {
          p.adam.m.push_back(take("adam.m." + name, t->shape()));
          p.adam.v.push_back(take("adam.v." + name, t->shape()));
        }
      }
      p.log = log_from(tj.at("log"));
      c.training = std::move(p);
    }
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt " + where + ": " + e.what());
  }
  return c;
}

}  // namespace ldam
