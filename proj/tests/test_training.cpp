#include <doctest.h>

#include "ldam/checkpoint.hpp"
#include "ldam/training.hpp"
#include "support/fixtures.hpp"
#include "support/tempdir.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

using namespace ldam;
using ldam::testing::TempDir;
using ldam::testing::slurp;
using ldam::testing::tiny_config;
using ldam::testing::write_file;

namespace {

struct World {
  TaskSchema schema;
  ModelConfig config;
  EmbeddingProvider provider;
  NameEmbeddings names;
  std::vector<EncodedSample> train;
  std::vector<EncodedSample> val;
};

World tiny_world(std::size_t n = 40, Modality mode = Modality::multimodal) {
  TaskSchema schema;
  schema.indicator_names = {"hr", "sbp", "temp"};
  schema.label_names = {"sepsis", "aki", "chf", "copd"};
  schema.time_steps = 5;
  SynthSpec spec = SynthSpec::defaults(schema);
  spec.n_samples = n;
  spec.filler_vocab = 20;
  spec.note_length = 6;
  spec.base_label_rate = 0.3;
  ModelConfig config = tiny_config(mode);
  config.max_note_len = 16;
  auto provider = EmbeddingProvider::from_table(synthetic_embeddings(spec, schema, 8));
  const auto samples = generate_synthetic(spec, schema);
  const auto [tr, va] = split(samples, 0.75, 1);
  World w{schema, config, provider, encode_names(schema, provider), {}, {}};
  w.train = encode_dataset(tr, provider, config);
  w.val = encode_dataset(va, provider, config);
  return w;
}

TrainConfig quick(int epochs, std::uint64_t seed = 3) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  t.lr = 1e-2;
  t.seed = seed;
  return t;
}

std::vector<double> losses(const TrainLog& log) {
  std::vector<double> out;
  for (const auto& r : log.records) out.push_back(r.loss);
  return out;
}

void check_params_equal(ModelParams a, ModelParams b) {
  auto na = a.named();
  auto nb = b.named();
  REQUIRE(na.size() == nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    CHECK(na[i].second->shape() == nb[i].second->shape());
    CHECK(na[i].second->value() == nb[i].second->value());
  }
}

}  // namespace

TEST_SUITE("training.config") {
  TEST_CASE("invalid settings are rejected") {
    TrainConfig t;
    CHECK_NOTHROW(t.validate());
    t.epochs = 0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TrainConfig{};
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TrainConfig{};
    t.lr = 0.0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TrainConfig{};
    t.early_stop_patience = 0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  }

  TEST_CASE("train with zero epochs is refused") {
    const World w = tiny_world(8);
    CHECK_THROWS_AS(train(w.train, nullptr, w.names, w.config, quick(0)), std::invalid_argument);
  }

  TEST_CASE("empty training set") {
    const World w = tiny_world(8);
    CHECK_THROWS_AS(train({}, nullptr, w.names, w.config, quick(1)), TrainingError);
  }
}

TEST_SUITE("training.loop") {
  TEST_CASE("one sample, fifty steps lowers the loss") {
    const World w = tiny_world(8);
    const std::vector<EncodedSample> one{w.train[0]};
    TrainConfig t = quick(50);
    t.batch_size = 1;
    const TrainState s = train(one, nullptr, w.names, w.config, t);
    REQUIRE(s.log.records.size() == 50);
    CHECK(s.log.records.back().loss < s.log.records.front().loss);
  }

  TEST_CASE("same seed reproduces the loss trace bitwise") {
    const World w = tiny_world();
    const TrainState a = train(w.train, &w.val, w.names, w.config, quick(4));
    const TrainState b = train(w.train, &w.val, w.names, w.config, quick(4));
    CHECK(losses(a.log) == losses(b.log));
    for (std::size_t i = 0; i < a.log.records.size(); ++i) {
      CHECK(a.log.records[i].term1 == b.log.records[i].term1);
      CHECK(a.log.records[i].val_micro_auc == b.log.records[i].val_micro_auc);
    }
    check_params_equal(a.params.clone(), b.params.clone());
    const TrainState c = train(w.train, &w.val, w.names, w.config, quick(4, 4));
    CHECK(losses(a.log) != losses(c.log));
  }

  TEST_CASE("epoch order depends on seed and epoch only") {
    const World w = tiny_world(8);
    const Trainer t(w.config, quick(3), w.names, initial_state(w.config, quick(3)));
    const auto e1 = t.epoch_order(30, 1);
    CHECK(e1 == t.epoch_order(30, 1));
    CHECK(e1 != t.epoch_order(30, 2));
    std::vector<std::size_t> sorted(e1);
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(30);
    std::iota(iota.begin(), iota.end(), std::size_t{0});
    CHECK(sorted == iota);
    TrainConfig fixed = quick(3);
    fixed.shuffle = false;
    CHECK(Trainer(w.config, fixed, w.names, initial_state(w.config, fixed)).epoch_order(30, 2) == iota);
  }

  TEST_CASE("five plus five epochs equals ten") {
    const World w = tiny_world();
    const TrainState straight = train(w.train, &w.val, w.names, w.config, quick(10));
    TrainState half = train(w.train, &w.val, w.names, w.config, quick(5));
    TempDir dir;
    save_checkpoint(make_checkpoint(w.config, w.schema, w.provider.descriptor(), half, 3), dir / "half.ckpt");
    const Checkpoint loaded = load_checkpoint(dir / "half.ckpt");
    const TrainState resumed = train(w.train, &w.val, w.names, loaded.config, quick(10), resume_state(loaded));
    REQUIRE(resumed.log.records.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(resumed.log.records[i].epoch == static_cast<int>(i + 1));
      CHECK(std::abs(resumed.log.records[i].loss - straight.log.records[i].loss) <= 1e-12);
    }
    check_params_equal(resumed.params.clone(), straight.params.clone());
  }

  TEST_CASE("text-only training never touches the recurrent weights") {
    const World w = tiny_world(40, Modality::text_only);
    const TrainState init = initial_state(w.config, quick(3));
    const TrainState s = train(w.train, nullptr, w.names, w.config, quick(3));
    auto before = const_cast<ModelParams&>(init.params).named();
    auto after = const_cast<ModelParams&>(s.params).named();
    for (std::size_t i = 0; i < before.size(); ++i) {
      CAPTURE(before[i].first);
      const bool unused = before[i].first.rfind("gru_", 0) == 0 || before[i].first.rfind("ts_conv", 0) == 0;
      if (unused) CHECK(before[i].second->value() == after[i].second->value());
    }
    CHECK(before[0].second->value() != after[0].second->value());
  }

  TEST_CASE("an epoch leaves the embedding inputs untouched") {
    World w = tiny_world();
    const NameEmbeddings names = w.names;
    const Matrix note = w.train[0].note;
    const Eigen::VectorXd trigger = w.provider.token("trgaxa");
    Trainer t(w.config, quick(1), w.names, initial_state(w.config, quick(1)));
    t.run_epoch(w.train);
    CHECK(w.train[0].note == note);
    CHECK(w.names.labels == names.labels);
    CHECK(w.names.indicators == names.indicators);
    CHECK(w.provider.token("trgaxa") == trigger);
  }

  TEST_CASE("early stopping keeps the best validation epoch") {
    const World w = tiny_world(60);
    TrainConfig t = quick(30);
    t.early_stop_patience = 2;
    const TrainState s = train(w.train, &w.val, w.names, w.config, t);
    double best = -1.0;
    for (const auto& r : s.log.records) best = std::max(best, r.val_micro_auc.value_or(-1.0));
    const double got = roc_auc(predict(w.val, w.names, s.params, w.config), label_matrix(w.val), Averaging::micro);
    CHECK(got == best);
    CHECK(s.log.records.size() <= 30);
  }

  TEST_CASE("two hundred planted samples: late loss under half the early loss") {
    const TaskSchema schema = TaskSchema::desk_default();
    SynthSpec spec = SynthSpec::defaults(schema);
    spec.n_samples = 200;
    const auto provider = EmbeddingProvider::from_table(synthetic_embeddings(spec, schema, 64));
    const ModelConfig config;
    const auto data = encode_dataset(generate_synthetic(spec, schema), provider, config);
    const TrainState s = train(data, nullptr, encode_names(schema, provider), config, TrainConfig{});
    const auto l = losses(s.log);
    REQUIRE(l.size() == 50);
    const double first = std::accumulate(l.begin(), l.begin() + 5, 0.0) / 5.0;
    const double last = std::accumulate(l.end() - 5, l.end(), 0.0) / 5.0;
    CAPTURE(first);
    CAPTURE(last);
    CHECK(last < 0.5 * first);
  }
}

TEST_SUITE("training.evaluate") {
  TEST_CASE("report matches the metrics module") {
    const World w = tiny_world();
    const ModelParams p = ModelParams::init(w.config, 2);
    const auto report = evaluate(w.train, w.names, p, w.config, 0.5);
    const auto direct = compute_metrics(predict(w.train, w.names, p, w.config), label_matrix(w.train), 0.5);
    CHECK(report.micro_auc == direct.micro_auc);
    CHECK(report.macro_precision == direct.macro_precision);
  }

  TEST_CASE("non-finite parameters are reported") {
    const World w = tiny_world(8);
    ModelParams p = ModelParams::init(w.config, 2);
    p.f7.bias.mutable_value()(0, 0) = NAN;
    CHECK_THROWS_AS(evaluate(w.train, w.names, p, w.config), TrainingError);
  }

  TEST_CASE("log csv") {
    TrainLog log;
    log.records.push_back({1, 0.5, 0.25, 0.25, 0.75, 1.5});
    log.records.push_back({2, 0.4, 0.2, 0.2, std::nullopt, 1.0});
    CHECK(log.to_csv() == "epoch,loss,term1,term2,val_micro_auc,seconds\n1,0.5,0.25,0.25,0.75,1.500000\n2,0.40000000000000002,0.20000000000000001,0.20000000000000001,,1.000000\n");
  }
}

TEST_SUITE("training.checkpoint") {
  TEST_CASE("round trip reproduces forward outputs bitwise") {
    const World w = tiny_world();
    const TrainState s = train(w.train, nullptr, w.names, w.config, quick(2));
    TempDir dir;
    const Checkpoint c = make_checkpoint(w.config, w.schema, w.provider.descriptor(), s, 3);
    save_checkpoint(c, dir / "m.ckpt");
    const Checkpoint back = load_checkpoint(dir / "m.ckpt");
    check_params_equal(back.params.clone(), s.params.clone());
    CHECK(predict(w.val, w.names, back.params, back.config) == predict(w.val, w.names, s.params, w.config));
    CHECK(back.embeddings == w.provider.descriptor());
    CHECK(back.schema.label_names == w.schema.label_names);
    CHECK(back.config.max_note_len == 16);
    REQUIRE(back.training.has_value());
    CHECK(back.training->epochs_completed == 2);
    CHECK(back.training->adam.step == s.adam.step);
    CHECK(back.training->adam.m == s.adam.m);
    CHECK(back.training->adam.v == s.adam.v);
    REQUIRE(back.training->log.records.size() == s.log.records.size());
    for (std::size_t i = 0; i < s.log.records.size(); ++i) {
      CHECK(back.training->log.records[i].loss == s.log.records[i].loss);
      CHECK(back.training->log.records[i].val_micro_auc == s.log.records[i].val_micro_auc);
      CHECK(back.training->log.records[i].seconds == 0.0);  // timing is not persisted
    }
    save_checkpoint(back, dir / "again.ckpt");
    CHECK(slurp(dir / "m.ckpt") == slurp(dir / "again.ckpt"));
  }

  TEST_CASE("config survives json") {
    ModelConfig c = tiny_config(Modality::timeseries_only, AttentionKind::self);
    c.lambda_label = 0.125;
    c.conv_channels = 7;
    const ModelConfig back = model_config_from_json(model_config_to_json(c));
    CHECK(back.mode == c.mode);
    CHECK(back.attention == c.attention);
    CHECK(back.lambda_label == c.lambda_label);
    CHECK(back.conv_channels == 7);
    CHECK(back.ts_ngram == c.ts_ngram);
  }

  TEST_CASE("every truncation is a corrupt-file error") {
    const World w = tiny_world(8);
    TempDir dir;
    save_checkpoint(make_checkpoint(w.config, w.schema, "toy:1:8", initial_state(w.config, quick(1)), 1),
                    dir / "m.ckpt");
    const std::string bytes = slurp(dir / "m.ckpt");
    for (std::size_t cut : {std::size_t{0}, std::size_t{4}, std::size_t{12}, std::size_t{40}, bytes.size() / 2,
                            bytes.size() - 9, bytes.size() - 1}) {
      CAPTURE(cut);
      write_file(dir / "cut.ckpt", bytes.substr(0, cut));
      try {
        load_checkpoint(dir / "cut.ckpt");
        FAIL("truncated checkpoint loaded");
      } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("corrupt") != std::string::npos);
      }
    }
    std::string flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x10;
    write_file(dir / "flip.ckpt", flipped);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "flip.ckpt"), doctest::Contains("corrupt"), CheckpointError);
    write_file(dir / "tail.ckpt", bytes + "x");
    CHECK_THROWS_AS(load_checkpoint(dir / "tail.ckpt"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), CheckpointError);
  }

  TEST_CASE("a newer format version is refused by name") {
    const World w = tiny_world(8);
    TempDir dir;
    save_checkpoint(make_checkpoint(w.config, w.schema, "toy:1:8", initial_state(w.config, quick(1)), 1),
                    dir / "m.ckpt");
    std::string bytes = slurp(dir / "m.ckpt");
    bytes[8] = 2;  // version field follows the 8-byte magic
    write_file(dir / "v2.ckpt", bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "v2.ckpt"), doctest::Contains("version 2"), CheckpointError);
  }

  TEST_CASE("resume needs training progress") {
    const World w = tiny_world(8);
    Checkpoint c = make_checkpoint(w.config, w.schema, "toy:1:8", initial_state(w.config, quick(1)), 1);
    c.training.reset();
    CHECK_THROWS_AS(resume_state(c), CheckpointError);
    TempDir dir;
    save_checkpoint(c, dir / "bare.ckpt");
    CHECK_FALSE(load_checkpoint(dir / "bare.ckpt").training.has_value());
  }
}
