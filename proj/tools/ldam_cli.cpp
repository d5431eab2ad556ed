#include "ldam/checkpoint.hpp"
#include "ldam/config.hpp"
#include "ldam/explain.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace ldam;

namespace {

// Thrown for bad invocations that CLI11 cannot catch on its own (exit code 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("LDAM_SEED")) {
    char* end = nullptr;
    const auto v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw UsageError(std::string("LDAM_SEED is not an integer: '") + env + "'");
    return v;
  }
  return 7;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

EmbeddingProvider provider_from(const std::string& descriptor, const std::optional<std::string>& override_path) {
  if (override_path) return EmbeddingProvider::from_file(*override_path);
  return EmbeddingProvider::from_descriptor(descriptor);
}

struct SynthArgs {
  std::optional<std::uint64_t> seed;
  std::size_t n = 1000;
  std::string out;
  std::string schema_out;
  std::optional<std::string> spec;
  std::optional<std::string> embeddings_out;
  Eigen::Index dim = 64;
};

int cmd_synth(const SynthArgs& a) {
  const TaskSchema schema = TaskSchema::desk_default();
  const std::uint64_t seed = a.seed ? *a.seed : default_seed();
  ConfigMap entries;
  if (a.spec) entries = parse_key_values(read_text_file(*a.spec), *a.spec, synth_spec_keys());
  SynthSpec spec = synth_spec_from_config(entries, schema, seed);
  if (!entries.count("n_samples")) spec.n_samples = a.n;
  if (spec.n_samples == 0) throw UsageError("--n must be positive");

  const auto samples = generate_synthetic(spec, schema);
  save_dataset(samples, a.out);
  save_schema(schema, a.schema_out);
  if (a.embeddings_out) save_table(synthetic_embeddings(spec, schema, a.dim), *a.embeddings_out);

  std::printf("wrote %zu samples to %s\n", samples.size(), a.out.c_str());
  std::printf("label prevalence:\n");
  for (Eigen::Index j = 0; j < schema.num_labels(); ++j) {
    double positives = 0.0;
    for (const auto& s : samples) positives += s.labels(j);
    std::printf("  %-45s %.4f\n", schema.label_names[static_cast<std::size_t>(j)].c_str(),
                positives / static_cast<double>(samples.size()));
  }
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string schema;
  std::optional<std::string> embeddings;
  std::optional<std::uint64_t> toy_embed;
  std::optional<std::string> config;
  std::optional<std::string> val;
  std::optional<std::string> resume;
  std::string out;
  ConfigMap overrides;  // filled from the per-key flags
};

int cmd_train(TrainArgs a) {
  const TaskSchema schema = load_schema(a.schema);
  ModelConfig model;
  TrainConfig train;
  model.num_indicators = schema.num_indicators();
  model.num_labels = schema.num_labels();
  model.time_steps = schema.time_steps;
  if (!a.overrides.count("seed")) train.seed = default_seed();

  std::optional<Checkpoint> resumed;
  if (a.resume) {
    resumed = load_checkpoint(*a.resume);
    if (!resumed->training) throw UsageError("--resume checkpoint holds no training progress");
    model = resumed->config;
    train.seed = resumed->training->seed;
  }
  ConfigMap entries;
  if (a.config) entries = load_config_file(*a.config);
  for (const auto& [k, v] : a.overrides) entries[k] = v;
  if (resumed) {
    for (const auto& key : {"embed_dim", "hidden", "max_note_len", "ngram", "ts_ngram", "conv_channels", "mode",
                            "attention", "seed"}) {
      if (entries.count(key)) throw UsageError(std::string("--") + key + " cannot change when resuming");
    }
  }
  if (a.embeddings.has_value() == a.toy_embed.has_value()) {
    throw UsageError("exactly one of --embeddings or --toy-embed is required");
  }
  const EmbeddingProvider provider =
      a.embeddings ? EmbeddingProvider::from_file(*a.embeddings)
                   : EmbeddingProvider::toy(*a.toy_embed, entries.count("embed_dim") ? std::stol(entries["embed_dim"])
                                                                                     : model.embed_dim);
  model.embed_dim = provider.dim();
  if (entries.count("embed_dim") && std::stol(entries["embed_dim"]) != provider.dim()) {
    throw UsageError("embed_dim " + entries["embed_dim"] + " does not match the embedding table (" +
                     std::to_string(provider.dim()) + ")");
  }
  apply_config(entries, model, train);
  if (model.num_indicators != schema.num_indicators() || model.num_labels != schema.num_labels() ||
      model.time_steps != schema.time_steps) {
    throw UsageError("checkpoint and schema disagree on N_S, N_Y or T");
  }

  auto samples = load_dataset(a.data, schema);
  if (samples.empty()) throw UsageError(a.data + " contains no samples");
  std::vector<EhrSample> train_samples, val_samples;
  if (a.val) {
    train_samples = std::move(samples);
    val_samples = load_dataset(*a.val, schema);
  } else if (samples.size() >= 2) {
    std::tie(train_samples, val_samples) = split(samples, 0.8, train.seed);
  } else {
    train_samples = std::move(samples);
  }

  ensure_dir(a.out);
  const fs::path out_dir(a.out);
  {
    std::ofstream cfg(out_dir / "config.txt");
    cfg << config_to_string(model, train);
  }
  const auto names = encode_names(schema, provider);
  const auto train_enc = encode_dataset(train_samples, provider, model);
  const auto val_enc = encode_dataset(val_samples, provider, model);
  const std::string descriptor = provider.descriptor();

  std::optional<TrainState> start;
  if (resumed) start = resume_state(*resumed);
  std::fprintf(stderr, "training on %zu samples, validating on %zu\n", train_enc.size(), val_enc.size());
  const auto on_epoch = [&](const Trainer& t, const EpochRecord& r) {
    std::fprintf(stderr, "epoch %d loss %.6f term1 %.6f term2 %.6f", r.epoch, r.loss, r.term1, r.term2);
    if (r.val_micro_auc) std::fprintf(stderr, " val_micro_auc %.4f", *r.val_micro_auc);
    std::fprintf(stderr, " (%.2fs)\n", r.seconds);
    if (train.checkpoint_every > 0 && r.epoch % train.checkpoint_every == 0) {
      save_checkpoint(make_checkpoint(model, schema, descriptor, t.state(), train.seed), out_dir / "checkpoint.ckpt");
    }
  };
  const TrainState state = ldam::train(train_enc, val_enc.empty() ? nullptr : &val_enc, names, model, train,
                                       std::move(start), on_epoch);
  save_checkpoint(make_checkpoint(model, schema, descriptor, state, train.seed), out_dir / "model.ckpt");
  state.log.write_csv(out_dir / "train_log.csv");
  std::printf("wrote %s and %s\n", (out_dir / "model.ckpt").c_str(), (out_dir / "train_log.csv").c_str());
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  double threshold = 0.5;
  std::string out = ".";
  std::optional<std::string> embeddings;
};

int cmd_eval(const EvalArgs& a) {
  if (!(a.threshold > 0.0 && a.threshold < 1.0)) throw UsageError("--threshold must lie in (0, 1)");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const auto provider = provider_from(ckpt.embeddings, a.embeddings);
  const auto samples = load_dataset(a.data, ckpt.schema);
  const auto encoded = encode_dataset(samples, provider, ckpt.config);
  const auto report = evaluate(encoded, encode_names(ckpt.schema, provider), ckpt.params, ckpt.config, a.threshold);
  std::cout << report_table(report);
  ensure_dir(a.out);
  const fs::path csv = fs::path(a.out) / "metrics.csv";
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out << report_csv(report);
  std::printf("wrote %s\n", csv.c_str());
  return 0;
}

struct ExplainArgs {
  std::string data;
  std::string checkpoint;
  double fraction = 0.5;
  std::string out;
  std::optional<std::string> embeddings;
};

int cmd_explain(const ExplainArgs& a) {
  if (!(a.fraction > 0.0 && a.fraction <= 1.0)) throw UsageError("--fraction must lie in (0, 1]");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (ckpt.config.mode == Modality::timeseries_only) {
    throw UsageError("explain needs token attention; the checkpoint was trained timeseries_only");
  }
  const auto provider = provider_from(ckpt.embeddings, a.embeddings);
  const auto samples = load_dataset(a.data, ckpt.schema);
  const auto names = encode_names(ckpt.schema, provider);
  const auto encoded = encode_dataset(samples, provider, ckpt.config);

  ensure_dir(a.out);
  const fs::path dir(a.out);
  std::ofstream jsonl(dir / "highlights.jsonl"), text(dir / "highlights.txt"), channels(dir / "channels.csv");
  if (!jsonl || !text || !channels) throw std::runtime_error("cannot write into " + dir.string());
  channels << "id,rank,indicator,alpha\n";
  std::vector<ForwardOutput> outputs;
  std::vector<std::string> ids;
  char buf[64];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto out = forward(encoded[i], names, ckpt.params, ckpt.config);
    const auto note = highlight(samples[i], out, a.fraction);
    jsonl << highlight_to_json(note) << '\n';
    text << samples[i].id << '\t' << highlight_to_text(note) << '\n';
    if (out.alpha.size() > 0) {
      const auto ranking = channel_ranking(out.alpha, ckpt.schema.indicator_names);
      for (std::size_t r = 0; r < ranking.size(); ++r) {
        std::snprintf(buf, sizeof buf, "%.17g", ranking[r].second);
        channels << samples[i].id << ',' << (r + 1) << ",\"" << ranking[r].first << "\"," << buf << '\n';
      }
    }
    ids.push_back(samples[i].id);
    outputs.push_back(std::move(out));
  }
  const auto groups = projected_embeddings(ckpt.schema, names, ckpt.params, ids, outputs);
  export_embeddings(groups, dir / "embeddings.csv");
  std::printf("explained %zu samples into %s\n", samples.size(), dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ldam: train, evaluate and explain attention-based clinical risk models"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a planted-signal synthetic dataset");
  s->add_option("--seed", synth.seed, "Generator seed (default: $LDAM_SEED or 7)");
  s->add_option("--n", synth.n, "Number of samples")->check(CLI::PositiveNumber);
  s->add_option("--out", synth.out, "Output JSONL dataset")->required();
  s->add_option("--schema", synth.schema_out, "Output schema JSON")->required();
  s->add_option("--spec", synth.spec, "key = value generator settings")->check(CLI::ExistingFile);
  s->add_option("--embeddings-out", synth.embeddings_out, "Also write the companion embedding table");
  s->add_option("--dim", synth.dim, "Dimension of the companion embedding table")->check(CLI::PositiveNumber);

  TrainArgs train;
  std::map<std::string, std::optional<std::string>> train_flags;
  for (const auto& key : config_keys()) train_flags[key];
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--data", train.data, "Training JSONL")->required()->check(CLI::ExistingFile);
  t->add_option("--schema", train.schema, "Schema JSON")->required()->check(CLI::ExistingFile);
  auto* emb = t->add_option("--embeddings", train.embeddings, "Embedding table")->check(CLI::ExistingFile);
  auto* toy = t->add_option("--toy-embed", train.toy_embed, "Use the seeded toy embedder");
  emb->excludes(toy);
  t->add_option("--config", train.config, "key = value config file")->check(CLI::ExistingFile);
  t->add_option("--val", train.val, "Validation JSONL (default: 20% of --data)")->check(CLI::ExistingFile);
  t->add_option("--resume", train.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  t->add_option("--out", train.out, "Output directory")->required();
  for (auto& [key, value] : train_flags) t->add_option("--" + key, value, "Overrides '" + key + "' from --config");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--data", eval.data, "Evaluation JSONL")->required()->check(CLI::ExistingFile);
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("--threshold", eval.threshold, "Decision threshold for precision/recall");
  e->add_option("--out", eval.out, "Directory for metrics.csv");
  e->add_option("--embeddings", eval.embeddings, "Embedding table (default: the one recorded in the checkpoint)")
      ->check(CLI::ExistingFile);

  ExplainArgs explain;
  auto* x = app.add_subcommand("explain", "Export attention highlights, channel rankings and embeddings");
  x->add_option("--data", explain.data, "JSONL to explain")->required()->check(CLI::ExistingFile);
  x->add_option("--checkpoint", explain.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  x->add_option("--fraction", explain.fraction, "Share of tokens marked important");
  x->add_option("--out", explain.out, "Output directory")->required();
  x->add_option("--embeddings", explain.embeddings, "Embedding table (default: the one recorded in the checkpoint)")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) {
      for (auto& [key, value] : train_flags)
        if (value) train.overrides[key] = *value;
      return cmd_train(std::move(train));
    }
    if (*e) return cmd_eval(eval);
    if (*x) return cmd_explain(explain);
  } catch (const UsageError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "config error: %s\n", err.what());
    return 2;
  } catch (const std::invalid_argument& err) {
    std::fprintf(stderr, "invalid argument: %s\n", err.what());
    return 2;
  } catch (const DataError& err) {
    std::fprintf(stderr, "data error: %s\n", err.what());
    return 1;
  } catch (const CheckpointError& err) {
    std::fprintf(stderr, "checkpoint error: %s\n", err.what());
    return 1;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 2;
}
